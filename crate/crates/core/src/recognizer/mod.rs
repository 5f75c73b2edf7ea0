//! CRNN line recognizer: preprocessing, model, CTC training and evaluation.

mod model;
mod preprocess;
mod train;

pub use model::{ConvBlock, Crnn, CrnnConfig, NetConfig};
pub use preprocess::{line_tensor, preprocess_batch, preprocess_batch_with, Batch, ReadingOrder};
pub use train::{
    evaluate, read_transcripts, report_from, split_manifest, train, train_with_hooks, write_transcripts,
    EpochStats, EvalOptions, EvalReport, NoHooks, Split, TrainConfig, TrainHooks, TrainOutcome, Transcript,
    GRAD_GATE_TOLERANCE,
};

use std::collections::BTreeSet;

use rand::Rng;

use crate::ctc::{ctc_loss, decoder_registry, Alphabet};
use crate::net::{grad_check, Checkpoint, GradCheckReport, Mode, Parameterized, Tensor};
use crate::raster::Image;
use crate::{seed, Error, Result};

/// Sorted unique characters over all texts.
pub fn build_alphabet<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Alphabet> {
    let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot build an alphabet from empty texts".into()));
    }
    Alphabet::new(set.into_iter().collect())
}

/// Load a checkpoint's recognizer and transcribe one line image.
/// `decoder` is a registry name such as `greedy` or `beam:10`.
pub fn transcribe(ckpt: &Checkpoint, image: &Image, decoder: &str) -> Result<String> {
    let model = Crnn::from_checkpoint(ckpt)?;
    model.transcribe(image, decoder_registry().build(decoder)?.as_ref())
}

/// Finite-difference check of a tiny CRNN (two conv blocks, BiLSTM with
/// four units, five frames) under CTC loss, at eps 1e-6. Weights are drawn
/// from `[-1, 1]` so no parameter's gradient sits at the rounding floor.
pub fn gradient_gate(seed_value: u64) -> Result<GradCheckReport> {
    let net = NetConfig {
        conv_spec: vec![ConvBlock::new(2, 3, 1, [2, 2]), ConvBlock::new(3, 3, 1, [2, 2])],
        hidden_size: 4,
        dropout_p: 0.2,
        num_classes: 0,
        seed: seed_value,
    };
    let mut model = Crnn::new(net, Alphabet::new(vec!['a', 'b'])?, 8, ReadingOrder::Ltr)?;
    let mut rng = seed::rng(seed::derive(seed_value, &[0x6a7e]));
    for p in model.params_mut() {
        p.value = Tensor::from_fn(p.value.shape(), |_| rng.gen_range(-1.0..1.0));
    }
    let x = Tensor::from_fn(&[1, 8, 20], |_| rng.gen_range(0.0..1.0));
    let target = [1, 2, 1];
    let mode = Mode::Train {
        seed: seed::derive(seed_value, &[1]),
    };
    grad_check(&mut model, 1e-6, |m: &Crnn| {
        let (lp, caches) = m.forward(&x, mode)?;
        let (loss, grad) = ctc_loss(&lp, &target)?;
        let mut grads = m.grad_buffers();
        m.backward(&caches, grad, &mut grads)?;
        Ok((loss, grads))
    })
}

#[cfg(test)]
mod tests;
