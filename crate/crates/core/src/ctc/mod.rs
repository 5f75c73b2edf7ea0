//! Connectionist Temporal Classification: forward-backward loss with its
//! analytic gradient, an exhaustive oracle, and best-path / prefix-beam decoders.
//!
//! Class 0 is always the blank; symbol `i` of an [`Alphabet`] is class `i + 1`.

mod brute;
mod decode;

pub use brute::brute_force_ctc;
pub use decode::{
    beam_decode, decoder_registry, greedy_decode, BeamDecoder, Decoder, GreedyDecoder, Hypothesis,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BLANK: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("alphabet must not be empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &c in &symbols {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!("duplicate alphabet symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Number of output classes including the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn class_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + 1)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.class_of(c).ok_or_else(|| {
                    Error::InvalidArgument(format!("character {c:?} is not in the alphabet"))
                })
            })
            .collect()
    }

    /// Map class indices to text; the blank and out-of-range classes are skipped.
    pub fn decode(&self, classes: &[usize]) -> String {
        classes
            .iter()
            .filter(|&&k| k != BLANK)
            .filter_map(|&k| self.symbols.get(k - 1))
            .collect()
    }
}

/// T x C matrix of per-frame log-probabilities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsSequence {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitsSequence {
    /// Checked constructor: every row must exponentiate to 1 within 1e-9.
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        let seq = Self::from_raw(frames, classes, values)?;
        for t in 0..frames {
            let total: f64 = seq.row(t).iter().map(|v| v.exp()).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "frame {t} probabilities sum to {total}"
                )));
            }
        }
        Ok(seq)
    }

    /// Shape-checked constructor without the normalization check. The loss and
    /// its gradient are well defined for arbitrary log-scores, which finite
    /// differences rely on.
    pub fn from_raw(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need >= 1 frame and >= 2 classes, got {frames}x{classes}"
            )));
        }
        if values.len() != frames * classes {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{classes} sequence",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            classes,
            values,
        })
    }

    /// Log-normalize each row of arbitrary scores.
    pub fn from_scores(frames: usize, classes: usize, mut scores: Vec<f64>) -> Result<Self> {
        if scores.len() != frames * classes {
            return Err(Error::Shape(format!(
                "{} scores for a {frames}x{classes} sequence",
                scores.len()
            )));
        }
        for row in scores.chunks_mut(classes.max(1)) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Self::from_raw(frames, classes, scores)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    #[inline]
    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Minimum frame count that can emit `target`: one frame per label plus one
/// separating blank per adjacent repeat.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

pub(crate) fn check_target(lp: &LogitsSequence, target: &[usize]) -> Result<()> {
    if let Some(&bad) = target.iter().find(|&&k| k == BLANK || k >= lp.classes) {
        return Err(Error::InvalidArgument(format!(
            "target class {bad} outside 1..{}",
            lp.classes
        )));
    }
    let required = min_frames(target);
    if lp.frames < required {
        return Err(Error::InfeasibleTarget {
            frames: lp.frames,
            required,
        });
    }
    Ok(())
}

struct Lattice {
    alpha: Vec<f64>,
    states: usize,
    log_p: f64,
}

fn extended_label(target: &[usize], s: usize) -> usize {
    if s % 2 == 0 {
        BLANK
    } else {
        target[s / 2]
    }
}

/// State `s` may be entered from `s - 2` when it is a label differing from the previous label.
fn can_skip(target: &[usize], s: usize) -> bool {
    s >= 2 && s % 2 == 1 && target[s / 2] != target[s / 2 - 1]
}

/// Forward recursion over the blank-augmented target, in log space.
fn forward(lp: &LogitsSequence, target: &[usize]) -> Lattice {
    let t_len = lp.frames;
    let s_len = 2 * target.len() + 1;
    let label = |s| extended_label(target, s);
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp.at(0, BLANK);
    if s_len > 1 {
        alpha[1] = lp.at(0, label(1));
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(target, s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + lp.at(t, label(s)) };
        }
    }
    let end = &alpha[(t_len - 1) * s_len..];
    let log_p = if s_len > 1 {
        log_add(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };
    Lattice {
        alpha,
        states: s_len,
        log_p,
    }
}

/// Exact `log P(target)` summed over all alignments; `-inf` when infeasible.
pub fn log_likelihood(lp: &LogitsSequence, target: &[usize]) -> f64 {
    if lp.frames < min_frames(target) {
        return f64::NEG_INFINITY;
    }
    forward(lp, target).log_p
}

/// Negative log-likelihood of `target` and its gradient with respect to every
/// entry of the log-probability matrix (row-major, T x C).
pub fn ctc_loss(lp: &LogitsSequence, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_target(lp, target)?;
    let Lattice {
        alpha,
        states: s_len,
        log_p,
    } = forward(lp, target);
    if !log_p.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let t_len = lp.frames;
    let c = lp.classes;
    let label = |s| extended_label(target, s);
    let ninf = f64::NEG_INFINITY;

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp.at(t_len - 1, label(s_len - 1));
    if s_len > 1 {
        beta[last + s_len - 2] = lp.at(t_len - 1, label(s_len - 2));
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(target, s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + lp.at(t, label(s)) };
        }
    }

    // Posterior occupancy of class k at frame t. Alpha and beta both include
    // the emission at t, so it is divided out once.
    let mut grad = vec![0.0; t_len * c];
    for t in 0..t_len {
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == ninf || b == ninf {
                continue;
            }
            let k = label(s);
            grad[t * c + k] -= (a + b - lp.at(t, k) - log_p).exp();
        }
    }
    Ok((-log_p, grad))
}

/// How per-sample losses are averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Arithmetic mean of raw per-sample losses.
    #[default]
    Mean,
    /// Each loss is divided by its target length before averaging.
    MeanPerTargetLength,
}

impl Reduction {
    /// Weight applied to a sample's loss (and gradient) in a batch of `batch` samples.
    pub fn weight(self, target_len: usize, batch: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / batch as f64,
            Reduction::MeanPerTargetLength => 1.0 / (batch as f64 * target_len.max(1) as f64),
        }
    }
}
