use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ConvBlock, Crnn, NetConfig};
use super::preprocess::{preprocess_batch_with, Batch, ReadingOrder};
use super::{build_alphabet, gradient_gate};
use crate::ctc::{ctc_loss, decoder_registry, min_frames, Alphabet, Decoder, GreedyDecoder, Reduction};
use crate::metrics::ErrorTotals;
use crate::net::{adamw_step, Checkpoint, EarlyStopping, Goal, Mode, Parameterized, Tensor, Verdict};
use crate::synth::LineSample;
use crate::{seed, Error, Result};

/// Gate threshold for the pre-training gradient check.
pub const GRAD_GATE_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub target_height: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Lines held out for testing before the train/val split.
    pub test_holdout: usize,
    pub normalize_by_target_len: bool,
    pub blackout: bool,
    pub reading_order: ReadingOrder,
    pub conv_spec: Vec<ConvBlock>,
    pub hidden_size: usize,
    /// Fixed symbol set; derived from the corpus when absent.
    pub alphabet: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            target_height: 32,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            dropout: 0.2,
            early_stop_patience: 5,
            min_delta: 0.0,
            max_epochs: 50,
            seed: 42,
            train_fraction: 0.8,
            val_fraction: 0.2,
            test_holdout: 100,
            normalize_by_target_len: false,
            blackout: true,
            reading_order: ReadingOrder::Auto,
            conv_spec: net.conv_spec,
            hidden_size: net.hidden_size,
            alphabet: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let fracs = [self.train_fraction, self.val_fraction];
        if fracs.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || self.train_fraction + self.val_fraction > 1.0 + 1e-12 {
            return bad(format!(
                "train/val fractions {} + {} must be positive and sum to <= 1",
                self.train_fraction, self.val_fraction
            ));
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return bad("lr must be > 0; weight_decay and min_delta >= 0".into());
        }
        self.net_config().validate()
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            conv_spec: self.conv_spec.clone(),
            hidden_size: self.hidden_size,
            dropout_p: self.dropout,
            num_classes: 0,
            seed: self.seed,
        }
    }

    pub fn reduction(&self) -> Reduction {
        if self.normalize_by_target_len {
            Reduction::MeanPerTargetLength
        } else {
            Reduction::Mean
        }
    }
}

/// Indices into the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffle once, take the test holdout first, then split the rest by the
/// configured fractions. The holdout is capped at a fifth of the corpus.
pub fn split_manifest(n: usize, cfg: &TrainConfig) -> Result<Split> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 lines, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[0x5917])));
    let holdout = cfg.test_holdout.min(n / 5);
    let rest = n - holdout;
    let n_train = ((rest as f64 * cfg.train_fraction).round() as usize).clamp(1, rest - 1);
    let n_val = ((rest as f64 * cfg.val_fraction).round() as usize).clamp(1, rest - n_train);
    Ok(Split {
        test: idx[..holdout].to_vec(),
        train: idx[holdout..holdout + n_train].to_vec(),
        val: idx[holdout + n_train..holdout + n_train + n_val].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_cer: f64,
    /// Training lines skipped because the target cannot fit the frames.
    pub skipped: usize,
}

/// Callbacks around each epoch.
pub trait TrainHooks {
    /// Replace the measured validation loss before early stopping sees it.
    fn val_loss(&mut self, _epoch: usize, measured: f64) -> f64 {
        measured
    }

    fn epoch_end(&mut self, _stats: &EpochStats) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Crnn,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub split: Split,
    pub grad_check_error: f64,
}

struct Prepared<'a> {
    batch: Batch,
    targets: Vec<Option<(&'a LineSample, Vec<usize>)>>,
}

fn prepare<'a>(
    model: &Crnn,
    samples: &[&'a LineSample],
    blackout: bool,
) -> Result<Prepared<'a>> {
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let batch = preprocess_batch_with(&images, model.config.target_height, blackout, model.is_rtl())?;
    let frames = model.frames(batch.width());
    let targets = samples
        .iter()
        .map(|s| {
            let t = model.alphabet().encode(&s.text).ok()?;
            (!t.is_empty() && frames > 0 && min_frames(&t) <= frames).then_some((*s, t))
        })
        .collect();
    Ok(Prepared { batch, targets })
}

/// Per-sample losses and gradient sum of one batch, reduced in sample order.
fn batch_gradient(
    model: &Crnn,
    prep: &Prepared,
    reduction: Reduction,
    mode_seed: u64,
) -> Result<(Vec<f64>, Vec<Tensor>)> {
    let used: Vec<usize> = (0..prep.targets.len()).filter(|&i| prep.targets[i].is_some()).collect();
    let per_sample: Vec<(f64, Vec<Tensor>)> = used
        .par_iter()
        .map(|&i| {
            let (_, target) = prep.targets[i].as_ref().expect("filtered");
            let mode = Mode::Train {
                seed: seed::derive(mode_seed, &[i as u64]),
            };
            let (lp, caches) = model.forward(&prep.batch.sample(i), mode)?;
            let (loss, mut grad) = ctc_loss(&lp, target)?;
            let w = reduction.weight(target.len(), used.len());
            grad.iter_mut().for_each(|g| *g *= w);
            let mut grads = model.grad_buffers();
            model.backward(&caches, grad, &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = model.grad_buffers();
    let mut losses = Vec::with_capacity(per_sample.len());
    for (loss, grads) in per_sample {
        losses.push(loss);
        for (t, g) in total.iter_mut().zip(&grads) {
            t.add_assign(g);
        }
    }
    Ok((losses, total))
}

/// Mean per-line loss (normalized per target length if configured) and
/// greedy CER over `samples`, batched like training.
fn validate(model: &Crnn, samples: &[&LineSample], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut counted = 0;
    let mut totals = ErrorTotals::default();
    for chunk in samples.chunks(cfg.batch_size) {
        let prep = prepare(model, chunk, cfg.blackout)?;
        let results: Vec<(Option<f64>, String)> = (0..chunk.len())
            .into_par_iter()
            .map(|i| {
                let (lp, _) = model.forward(&prep.batch.sample(i), Mode::Eval)?;
                let loss = match &prep.targets[i] {
                    Some((_, t)) => Some(ctc_loss(&lp, t)?.0 * cfg.reduction().weight(t.len(), 1)),
                    None => None,
                };
                Ok((loss, GreedyDecoder.decode_text(&lp, model.alphabet())))
            })
            .collect::<Result<_>>()?;
        for (s, (loss, pred)) in chunk.iter().zip(results) {
            if let Some(l) = loss {
                loss_sum += l;
                counted += 1;
            }
            totals.add(&pred, &s.text);
        }
    }
    let loss = if counted == 0 { f64::INFINITY } else { loss_sum / counted as f64 };
    Ok((loss, totals.cer()))
}

pub fn train(samples: &[LineSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_hooks(samples, cfg, &mut NoHooks)
}

/// Train a recognizer: gradient gate, deterministic split, shuffled
/// minibatches with AdamW, and early stopping on validation loss. The
/// returned model carries the best-validation parameters.
pub fn train_with_hooks(samples: &[LineSample], cfg: &TrainConfig, hooks: &mut dyn TrainHooks) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gate = gradient_gate(cfg.seed)?;
    if !(gate.max_tensor_rel_error < GRAD_GATE_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "gradient check failed: relative error {:e}",
            gate.max_tensor_rel_error
        )));
    }
    let alphabet = match &cfg.alphabet {
        Some(symbols) => {
            let a = Alphabet::new(symbols.chars().collect())?;
            for s in samples {
                a.encode(&s.text).map_err(|e| {
                    Error::InvalidArgument(format!("{} line {}: {e}", s.source_page, s.line_index))
                })?;
            }
            a
        }
        None => build_alphabet(samples.iter().map(|s| s.text.as_str()))?,
    };
    let split = split_manifest(samples.len(), cfg)?;
    let mut model = Crnn::new(cfg.net_config(), alphabet, cfg.target_height, cfg.reading_order)?;
    let val: Vec<&LineSample> = split.val.iter().map(|&i| &samples[i]).collect();
    let mut order = split.train.clone();
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, cfg.min_delta, Goal::Minimize);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[0xe90c, epoch as u64])));
        let mut losses = Vec::new();
        let mut skipped = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LineSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let prep = prepare(&model, &batch, cfg.blackout)?;
            skipped += prep.targets.iter().filter(|t| t.is_none()).count();
            if prep.targets.iter().all(Option::is_none) {
                continue;
            }
            let mode_seed = seed::derive(cfg.seed, &[0xd809, epoch as u64, b as u64]);
            let (batch_losses, grads) = batch_gradient(&model, &prep, cfg.reduction(), mode_seed)?;
            losses.extend(batch_losses);
            for (p, g) in model.params_mut().into_iter().zip(grads) {
                p.grad = g;
                adamw_step(p, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            }
        }
        if skipped > 0 {
            log::warn!("epoch {epoch}: skipped {skipped} lines whose targets exceed the frame count");
        }
        let (measured, val_cer) = validate(&model, &val, cfg)?;
        let val_loss = hooks.val_loss(epoch, measured);
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_cer,
            skipped,
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val CER {val_cer:.4}"
        );
        hooks.epoch_end(&stats);
        history.push(stats);
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Stalled => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = stopper.best_epoch();
    let extra = serde_json::json!({
        "best_epoch": best_epoch,
        "stopped_early": stopped_early,
        "grad_check_error": gate.max_tensor_rel_error,
        "split": split,
        "train_config": cfg,
    });
    let checkpoint = best.to_checkpoint(serde_json::to_value(&history)?, extra)?;
    Ok(TrainOutcome {
        model: best,
        checkpoint,
        history,
        best_epoch,
        stopped_early,
        split,
        grad_check_error: gate.max_tensor_rel_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub page: String,
    pub line: u32,
    pub text: String,
    pub prediction: String,
    /// Absent when the line cannot be scored (unknown symbol or too few frames).
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub cer: f64,
    pub wer: f64,
    pub samples: Vec<Transcript>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Decoder registry name, e.g. `greedy` or `beam:8`.
    pub decoder: String,
    /// 1 transcribes each line on its own; larger values pad like training.
    pub batch_size: usize,
    pub blackout: bool,
    pub normalize_by_target_len: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            decoder: "greedy".into(),
            batch_size: 1,
            blackout: true,
            normalize_by_target_len: false,
        }
    }
}

/// Mean CTC loss over scorable lines plus corpus CER and WER.
pub fn evaluate(model: &Crnn, samples: &[LineSample], opts: &EvalOptions) -> Result<EvalReport> {
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let decoder: Box<dyn Decoder> = decoder_registry().build(&opts.decoder)?;
    let reduction = if opts.normalize_by_target_len {
        Reduction::MeanPerTargetLength
    } else {
        Reduction::Mean
    };
    let refs: Vec<&LineSample> = samples.iter().collect();
    let mut transcripts = Vec::with_capacity(samples.len());
    for chunk in refs.chunks(opts.batch_size) {
        let prep = prepare(model, chunk, opts.blackout)?;
        let part: Vec<Transcript> = (0..chunk.len())
            .into_par_iter()
            .map(|i| {
                let (lp, _) = model.forward(&prep.batch.sample(i), Mode::Eval)?;
                let loss = match &prep.targets[i] {
                    Some((_, t)) => Some(ctc_loss(&lp, t)?.0 * reduction.weight(t.len(), 1)),
                    None => None,
                };
                let s = chunk[i];
                Ok(Transcript {
                    page: s.source_page.clone(),
                    line: s.line_index,
                    text: s.text.clone(),
                    prediction: decoder.decode_text(&lp, model.alphabet()),
                    loss,
                })
            })
            .collect::<Result<_>>()?;
        transcripts.extend(part);
    }
    Ok(report_from(transcripts))
}

/// Aggregate transcripts into a report.
pub fn report_from(samples: Vec<Transcript>) -> EvalReport {
    let mut totals = ErrorTotals::default();
    let losses: Vec<f64> = samples.iter().filter_map(|t| t.loss).collect();
    for t in &samples {
        totals.add(&t.prediction, &t.text);
    }
    EvalReport {
        loss: if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        },
        cer: totals.cer(),
        wer: totals.wer(),
        samples,
    }
}

/// One JSON object per line.
pub fn write_transcripts(samples: &[Transcript], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for t in samples {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
