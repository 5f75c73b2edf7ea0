//! A small differentiable-network kernel in f64.
//!
//! Layers are stateless with respect to a forward pass: `forward` returns the
//! output plus an opaque cache, and `backward` consumes that cache. Parameter
//! gradients are accumulated into caller-provided buffers, so several forward
//! passes can share one set of weights.

mod checkpoint;
mod early_stop;
mod gradcheck;
mod layers;
mod lstm;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, MAGIC};
pub use early_stop::{EarlyStopping, Goal, Verdict};
pub use gradcheck::{
    check_layer, grad_check, grad_check_fn, layer_suite, relative_error, GradCheckReport, LayerCheck,
};
pub use layers::{
    AdaptiveAvgPoolHeight, Cache, ColumnsToSequence, Conv2d, Dropout, Layer, Linear, LogSoftmax,
    MaxPool2d, Mode, NearestUpsample, Relu, Sequential,
};
pub use lstm::BiLstm;
pub use optim::{adamw_step, AdamW};
pub use tensor::{Param, Tensor};

/// Anything that owns trainable parameters in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Zeroed gradient buffers matching [`Parameterized::params`].
    fn grad_buffers(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    fn num_weights(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
