//! Document-recognition workbench: synthetic right-to-left manuscript corpora,
//! double-page splitting, a CRNN line recognizer trained with CTC, and a
//! pseudo-labeling layout segmenter, plus the metrics used to score them.

pub mod ctc;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod net;
pub mod pagesplit;
pub mod raster;
pub mod recognizer;
pub mod registry;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
