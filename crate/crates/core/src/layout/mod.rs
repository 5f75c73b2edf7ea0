//! Page layout segmentation: label masks, class-weighted loss, a small
//! fully-convolutional segmenter and the pseudo-labeling self-training loop.

mod bench;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::Tensor;
#[cfg(test)]
use crate::net::{Checkpoint, Parameterized};
#[cfg(test)]
use crate::raster::Image;
use crate::raster::{decode_indexed_png, encode_indexed_png};
use crate::{Error, Result};

pub use bench::{benchmark_page, BenchmarkConfig, LayoutBenchmark};
pub use model::{Segmenter, SegmenterConfig, IMAGENET_MEAN, IMAGENET_STD};
pub use train::{
    evaluate_segmenter, self_train, split_indices, train_segmenter, LabeledPage, PageOrigin, RoundReport,
    SegmenterTrainConfig, SelfTrainConfig, SelfTrainOutcome, SelfTrainReport, TrainOutcome, UnlabeledPage,
};

/// Number of label channels, background included.
pub const NUM_CLASSES: usize = 9;
pub const NUM_FOREGROUND: usize = 8;
/// Legacy undefined label, remapped to background on load.
pub const LEGACY_LABEL: u8 = 11;

/// Serialized as its integer id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum LayoutClass {
    Background = 0,
    Heading = 1,
    Paragraph = 2,
    Request = 3,
    Decision = 4,
    Marginalia = 5,
    Attendance = 6,
    CatchWord = 7,
    Date = 8,
}

impl LayoutClass {
    pub const ALL: [LayoutClass; NUM_CLASSES] = [
        LayoutClass::Background,
        LayoutClass::Heading,
        LayoutClass::Paragraph,
        LayoutClass::Request,
        LayoutClass::Decision,
        LayoutClass::Marginalia,
        LayoutClass::Attendance,
        LayoutClass::CatchWord,
        LayoutClass::Date,
    ];

    /// Map a stored label id; 11 becomes background.
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0..=8 => Ok(Self::ALL[id as usize]),
            LEGACY_LABEL => Ok(Self::Background),
            _ => Err(Error::InvalidArgument(format!("unknown layout label {id}"))),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for LayoutClass {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<LayoutClass> for u8 {
    fn from(c: LayoutClass) -> u8 {
        c.id()
    }
}

/// RGB palette written into mask PNGs, indexed by label id.
pub const MASK_PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Per-pixel label ids in `0..=8`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LayoutMask {
    /// Build from raw ids, remapping the legacy label.
    pub fn new(width: usize, height: usize, mut labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {} labels for {width}x{height}",
                labels.len()
            )));
        }
        for l in &mut labels {
            *l = LayoutClass::from_id(*l)?.id();
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, class: LayoutClass) -> Self {
        Self {
            width,
            height,
            labels: vec![class.id(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: LayoutClass) {
        self.labels[y * self.width + x] = class.id();
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, class: LayoutClass) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set(x, y, class);
            }
        }
    }

    pub fn is_empty_page(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Counts per label id `0..=8`.
    pub fn counts(&self) -> [u64; NUM_CLASSES] {
        let mut c = [0u64; NUM_CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Columns `[x0, x1)`.
    pub fn crop_columns(&self, x0: usize, x1: usize) -> Result<Self> {
        if x0 >= x1 || x1 > self.width {
            return Err(Error::InvalidArgument(format!(
                "mask columns [{x0},{x1}) outside width {}",
                self.width
            )));
        }
        let labels = (0..self.height)
            .flat_map(|y| self.labels[y * self.width + x0..y * self.width + x1].iter().copied())
            .collect();
        Ok(Self {
            width: x1 - x0,
            height: self.height,
            labels,
        })
    }

    /// Nearest-neighbour resampling (the only resampling applied to labels).
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("mask size must be >= 1".into()));
        }
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                labels.push(self.labels[sy * self.width + sx]);
            }
        }
        Ok(Self { width, height, labels })
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (w, h, ids) = decode_indexed_png(bytes, origin)?;
        Self::new(w, h, ids)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let palette: Vec<u8> = MASK_PALETTE.iter().flatten().copied().collect();
        encode_indexed_png(self.width, self.height, &self.labels, &palette)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }
}

/// `total / (8 * (count_c + eps))` for classes 1..=8, total over foreground pixels.
pub fn class_weights(masks: &[LayoutMask], eps: f64) -> [f64; NUM_FOREGROUND] {
    let mut counts = [0u64; NUM_CLASSES];
    for m in masks {
        for (c, n) in counts.iter_mut().zip(m.counts()) {
            *c += n;
        }
    }
    let total: u64 = counts[1..].iter().sum();
    let mut w = [0.0; NUM_FOREGROUND];
    for (k, wk) in w.iter_mut().enumerate() {
        let n = counts[k + 1];
        if n == 0 {
            log::warn!("class {} absent from the training masks; its weight is inflated by eps", k + 1);
        }
        *wk = total as f64 / (NUM_FOREGROUND as f64 * (n as f64 + eps));
    }
    w
}

/// Softmax cross-entropy over `[9, H, W]` logits, background pixels excluded.
///
/// Returns `sum_p w[label_p] * nll_p / N` with `N` the number of foreground
/// pixels, and the gradient with respect to the logits.
pub fn weighted_ce(logits: &Tensor, mask: &LayoutMask, weights: &[f64; NUM_FOREGROUND]) -> Result<(f64, Tensor)> {
    weighted_ce_with_background(logits, mask, weights, 0.0)
}

/// Like [`weighted_ce`], but background pixels contribute with weight
/// `background_weight` and are counted in `N` when that weight is positive.
pub fn weighted_ce_with_background(
    logits: &Tensor,
    mask: &LayoutMask,
    weights: &[f64; NUM_FOREGROUND],
    background_weight: f64,
) -> Result<(f64, Tensor)> {
    let [c, h, w] = logits.dims::<3>("segmentation logits")?;
    if c != NUM_CLASSES || h != mask.height || w != mask.width {
        return Err(Error::Shape(format!(
            "logits [{c},{h},{w}] vs mask {}x{}",
            mask.width, mask.height
        )));
    }
    if mask.is_empty_page() {
        return Err(Error::EmptyPage);
    }
    let weight_of = |label: u8| {
        if label == 0 {
            background_weight
        } else {
            weights[label as usize - 1]
        }
    };
    let n = mask
        .labels
        .iter()
        .filter(|&&l| l != 0 || background_weight > 0.0)
        .count();
    let plane = h * w;
    let x = logits.data();
    let mut grad = Tensor::zeros(&[c, h, w]);
    let g = grad.data_mut();
    let mut loss = 0.0;
    for (p, &label) in mask.labels.iter().enumerate() {
        let wt = weight_of(label);
        if wt == 0.0 && label == 0 {
            continue;
        }
        let max = (0..c).map(|k| x[k * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..c).map(|k| (x[k * plane + p] - max).exp()).sum();
        let lse = max + z.ln();
        loss += wt * (lse - x[label as usize * plane + p]);
        for k in 0..c {
            let prob = (x[k * plane + p] - lse).exp();
            let target = if k == label as usize { 1.0 } else { 0.0 };
            g[k * plane + p] = wt * (prob - target) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Per-class intersection and union pixel counts for classes 1..=8.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: [u64; NUM_FOREGROUND],
    pub union: [u64; NUM_FOREGROUND],
}

impl IouCounts {
    pub fn add(&mut self, pred: &LayoutMask, gt: &LayoutMask) -> Result<()> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(Error::DimensionMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if p == g {
                if p != 0 {
                    self.intersection[p as usize - 1] += 1;
                    self.union[p as usize - 1] += 1;
                }
            } else {
                if p != 0 {
                    self.union[p as usize - 1] += 1;
                }
                if g != 0 {
                    self.union[g as usize - 1] += 1;
                }
            }
        }
        Ok(())
    }

    /// Mean IoU over classes present in prediction or ground truth.
    /// With no foreground anywhere the two masks agree completely: 1.0.
    pub fn mean(&self) -> f64 {
        let ious: Vec<f64> = self
            .intersection
            .iter()
            .zip(&self.union)
            .filter(|(_, &u)| u > 0)
            .map(|(&i, &u)| i as f64 / u as f64)
            .collect();
        if ious.is_empty() {
            1.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

pub fn mean_iou(pred: &LayoutMask, gt: &LayoutMask) -> Result<f64> {
    let mut c = IouCounts::default();
    c.add(pred, gt)?;
    Ok(c.mean())
}

/// Dataset mIoU with intersections and unions pooled over all pages.
pub fn mean_iou_pooled<'a>(pairs: impl IntoIterator<Item = (&'a LayoutMask, &'a LayoutMask)>) -> Result<f64> {
    let mut c = IouCounts::default();
    for (p, g) in pairs {
        c.add(p, g)?;
    }
    Ok(c.mean())
}

/// Which pixels `avg_confidence` averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceScope {
    /// Pixels predicted as a foreground class.
    #[default]
    Foreground,
    AllPixels,
}

/// Mean of the per-pixel max probability; 0 when the scope is empty.
pub fn avg_confidence(confidence: &[f64], mask: &LayoutMask, scope: ConfidenceScope) -> f64 {
    let (sum, n) = confidence
        .iter()
        .zip(&mask.labels)
        .filter(|(_, &l)| scope == ConfidenceScope::AllPixels || l != 0)
        .fold((0.0, 0usize), |(s, n), (&c, _)| (s + c, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests;
