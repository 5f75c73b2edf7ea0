use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("malformed PNG {path}: {reason}")]
    MalformedPng { path: PathBuf, reason: String },

    #[error("unsupported PNG format in {path}: {detail}")]
    UnsupportedPng { path: PathBuf, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no glyph class for character {0:?}")]
    MissingGlyph(char),

    #[error("CTC target infeasible: {frames} frames cannot emit a target needing {required}")]
    InfeasibleTarget { frames: usize, required: usize },

    #[error("instance too large for exhaustive enumeration: {0} paths")]
    TooLarge(u128),

    #[error("empty page: mask has no foreground pixels")]
    EmptyPage,

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty ground truth")]
    EmptyGroundTruth,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown {kind} {name:?} (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for errors caused by bad input rather than a failing environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
