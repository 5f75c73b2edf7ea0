use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    class_weights, mean_iou_pooled, weighted_ce_with_background, ConfidenceScope, LayoutMask, Segmenter, SegmenterConfig,
};
use crate::net::{adamw_step, EarlyStopping, Goal, Mode, Parameterized, Verdict};
use crate::raster::Image;
use crate::{seed, Error, Result};

/// Where a training mask came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PageOrigin {
    GroundTruth,
    /// Model argmax from the given self-training round.
    Pseudo { round: usize },
}

#[derive(Clone, Debug)]
pub struct LabeledPage {
    pub stem: String,
    pub image: Image,
    pub mask: LayoutMask,
    pub origin: PageOrigin,
}

#[derive(Clone, Debug)]
pub struct UnlabeledPage {
    pub stem: String,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub weight_eps: f64,
    pub weight_decay: f64,
    /// Loss weight of background pixels; 0 masks them out entirely.
    pub background_weight: f64,
}

impl Default for SegmenterTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 2,
            patience: 5,
            max_epochs: 50,
            seed: 42,
            weight_eps: 1e-9,
            weight_decay: 0.0,
            background_weight: 0.0,
        }
    }
}

impl SegmenterTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.background_weight >= 0.0 && self.background_weight.is_finite()) {
            return Err(Error::InvalidArgument("background_weight must be finite and >= 0".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "lr, batch_size, patience and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_miou: f64,
    pub val_miou: Vec<f64>,
    pub train_loss: Vec<f64>,
}

/// Deterministically shuffle `0..n` and cut it at `round(n * fraction)`,
/// keeping both parts non-empty when `n >= 2`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut cut = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        cut = cut.clamp(1, n - 1);
    }
    let rest = idx.split_off(cut.min(n));
    (idx, rest)
}

pub fn evaluate_segmenter(model: &Segmenter, pages: &[LabeledPage]) -> Result<f64> {
    let preds: Vec<LayoutMask> = pages
        .par_iter()
        .map(|p| model.predict(&p.image).map(|(m, _)| m))
        .collect::<Result<_>>()?;
    mean_iou_pooled(preds.iter().zip(pages.iter().map(|p| &p.mask)))
}

/// Train in place with early stopping on validation mIoU; the best epoch's weights are kept.
pub fn train_segmenter(
    model: &mut Segmenter,
    train: &[LabeledPage],
    val: &[LabeledPage],
    cfg: &SegmenterTrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "degenerate split: {} training and {} validation pages",
            train.len(),
            val.len()
        )));
    }
    let masks: Vec<LayoutMask> = train.iter().map(|p| p.mask.clone()).collect();
    let weights = class_weights(&masks, cfg.weight_eps);
    let mut stopper = EarlyStopping::new(cfg.patience, 0.0, Goal::Maximize);
    let mut best = model.clone();
    let mut outcome = TrainOutcome {
        best_epoch: 0,
        epochs_run: 0,
        best_val_miou: f64::NEG_INFINITY,
        val_miou: Vec::new(),
        train_loss: Vec::new(),
    };
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[epoch as u64])));
        let (mut loss_sum, mut loss_pages) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.grad_buffers();
            let mut used = 0usize;
            for &i in batch {
                let page = &train[i];
                if page.mask.is_empty_page() {
                    continue;
                }
                let (logits, state) = model.forward(&page.image, Mode::Eval)?;
                let (loss, g) = weighted_ce_with_background(&logits, &page.mask, &weights, cfg.background_weight)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss);
                }
                model.backward(&state, &g, &mut grads)?;
                loss_sum += loss;
                loss_pages += 1;
                used += 1;
            }
            if used == 0 {
                continue;
            }
            for (p, g) in model.params_mut().into_iter().zip(&grads) {
                p.grad = g.clone();
                p.grad.scale(1.0 / used as f64);
                adamw_step(p, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            }
        }
        let miou = evaluate_segmenter(model, val)?;
        outcome.epochs_run = epoch;
        outcome.val_miou.push(miou);
        outcome.train_loss.push(if loss_pages > 0 { loss_sum / loss_pages as f64 } else { 0.0 });
        log::debug!("segmenter epoch {epoch}: val mIoU {miou:.4}");
        match stopper.observe(epoch, miou) {
            Verdict::Improved => {
                best = model.clone();
                outcome.best_epoch = epoch;
                outcome.best_val_miou = miou;
            }
            Verdict::Stalled => {}
            Verdict::Stop => break,
        }
    }
    *model = best;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    /// Minimum average confidence for a pool page to be pseudo-labeled.
    pub confidence_threshold: f64,
    pub max_rounds: usize,
    pub scope: ConfidenceScope,
    pub train: SegmenterTrainConfig,
    pub model: SegmenterConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.70,
            max_rounds: 5,
            scope: ConfidenceScope::Foreground,
            train: SegmenterTrainConfig::default(),
            model: SegmenterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub selected: Vec<String>,
    pub val_miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub baseline_val_miou: f64,
    pub rounds: Vec<RoundReport>,
    pub final_val_miou: f64,
    /// Pages behind the returned model with their provenance, in training order.
    pub train_set: Vec<(String, PageOrigin)>,
}

pub struct SelfTrainOutcome {
    pub baseline: Segmenter,
    pub model: Segmenter,
    pub report: SelfTrainReport,
}

/// Train a supervised baseline, then repeatedly pseudo-label confident pool pages
/// and retrain from the current weights. A round that selects nothing or does not
/// raise validation mIoU ends the loop; the best model by validation mIoU is returned.
pub fn self_train(
    labeled: Vec<LabeledPage>,
    pool: Vec<UnlabeledPage>,
    val: &[LabeledPage],
    cfg: &SelfTrainConfig,
) -> Result<SelfTrainOutcome> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("self-training needs at least one labeled page".into()));
    }
    if !(cfg.confidence_threshold > 0.0 && cfg.confidence_threshold.is_finite()) {
        return Err(Error::InvalidArgument("confidence_threshold must be positive".into()));
    }
    let mut train = labeled;
    let mut pool = pool;
    pool.sort_by(|a, b| a.stem.cmp(&b.stem));
    {
        let mut stems: Vec<&str> = train.iter().map(|p| p.stem.as_str()).collect();
        stems.extend(pool.iter().map(|p| p.stem.as_str()));
        let n = stems.len();
        stems.sort_unstable();
        stems.dedup();
        if stems.len() != n {
            return Err(Error::InvalidArgument("labeled set and pool share page stems".into()));
        }
    }

    let mut baseline = Segmenter::new(cfg.model.clone())?;
    let base = train_segmenter(&mut baseline, &train, val, &cfg.train)?;
    let mut best_val = base.best_val_miou;
    let mut current = baseline.clone();
    let mut accepted_len = train.len();
    let mut rounds = Vec::new();
    for round in 1..=cfg.max_rounds {
        if pool.is_empty() {
            break;
        }
        let scored: Vec<(LayoutMask, f64)> = pool
            .par_iter()
            .map(|p| current.confidence(&p.image, cfg.scope))
            .collect::<Result<_>>()?;
        let mut selected = Vec::new();
        let mut keep = Vec::new();
        for (page, (mask, conf)) in pool.drain(..).zip(scored) {
            if conf >= cfg.confidence_threshold {
                selected.push(page.stem.clone());
                train.push(LabeledPage {
                    stem: page.stem,
                    image: page.image,
                    mask,
                    origin: PageOrigin::Pseudo { round },
                });
            } else {
                keep.push(page);
            }
        }
        pool = keep;
        if selected.is_empty() {
            log::info!("self-training round {round}: nothing above threshold");
            break;
        }
        let mut candidate = current.clone();
        let round_cfg = SegmenterTrainConfig {
            seed: seed::derive(cfg.train.seed, &[round as u64]),
            ..cfg.train.clone()
        };
        let out = train_segmenter(&mut candidate, &train, val, &round_cfg)?;
        log::info!(
            "self-training round {round}: {} pages selected, val mIoU {:.4}",
            selected.len(),
            out.best_val_miou
        );
        rounds.push(RoundReport {
            selected,
            val_miou: out.best_val_miou,
        });
        if out.best_val_miou > best_val {
            best_val = out.best_val_miou;
            current = candidate;
            accepted_len = train.len();
        } else {
            break;
        }
    }
    Ok(SelfTrainOutcome {
        baseline,
        model: current,
        report: SelfTrainReport {
            baseline_val_miou: base.best_val_miou,
            rounds,
            final_val_miou: best_val,
            train_set: train[..accepted_len].iter().map(|p| (p.stem.clone(), p.origin)).collect(),
        },
    })
}
