use serde::{Deserialize, Serialize};

use super::{avg_confidence, ConfidenceScope, LayoutMask, NUM_CLASSES};
use crate::net::{Cache, Checkpoint, Conv2d, MaxPool2d, Mode, NearestUpsample, Param, Parameterized, Relu, Sequential, Tensor};
use crate::raster::Image;
use crate::{seed, Error, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

const STRIDE: usize = 4;
pub(crate) const KIND: &str = "segmenter";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    /// Channels of the two downsampling blocks.
    pub channels: [usize; 2],
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16],
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            seed: 42,
        }
    }
}

/// conv-relu-pool twice, a 3x3 context conv, a 1x1 classifier at 1/4 scale,
/// then nearest upsampling back to full resolution.
pub struct Segmenter {
    pub config: SegmenterConfig,
    net: Sequential,
}

pub(crate) struct ForwardState {
    caches: Vec<Cache>,
    padded: (usize, usize),
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        let [c1, c2] = config.channels;
        if c1 == 0 || c2 == 0 {
            return Err(Error::InvalidArgument("segmenter channels must be >= 1".into()));
        }
        if config.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("normalization std must be > 0".into()));
        }
        let mut rng = seed::rng(seed::derive(config.seed, &[0x5e6]));
        let mut net = Sequential::default();
        net.push(Conv2d::new(3, c1, 3, 1, 1, &mut rng));
        net.push(Relu);
        net.push(MaxPool2d { ph: 2, pw: 2 });
        net.push(Conv2d::new(c1, c2, 3, 1, 1, &mut rng));
        net.push(Relu);
        net.push(MaxPool2d { ph: 2, pw: 2 });
        net.push(Conv2d::new(c2, c2, 3, 1, 1, &mut rng));
        net.push(Relu);
        net.push(Conv2d::new(c2, NUM_CLASSES, 1, 1, 0, &mut rng));
        net.push(NearestUpsample { factor: STRIDE });
        Ok(Self { config, net })
    }

    /// Normalized `[3, H', W']` input, zero-padded up to multiples of 4.
    pub fn input_tensor(&self, img: &Image) -> Tensor {
        let (w, h) = (img.width(), img.height());
        let (pw, ph) = (w.div_ceil(STRIDE) * STRIDE, h.div_ceil(STRIDE) * STRIDE);
        let mut t = Tensor::zeros(&[3, ph, pw]);
        let d = t.data_mut();
        for c in 0..3 {
            let src = if img.is_gray() { 0 } else { c };
            for y in 0..h {
                for x in 0..w {
                    let v = img.get(x, y, src) as f64 / 255.0;
                    d[(c * ph + y) * pw + x] = (v - self.config.mean[c]) / self.config.std[c];
                }
            }
        }
        t
    }

    /// Logits `[9, H, W]` for an image.
    pub(crate) fn forward(&self, img: &Image, mode: Mode) -> Result<(Tensor, ForwardState)> {
        let x = self.input_tensor(img);
        let padded = (x.shape()[1], x.shape()[2]);
        let (out, caches) = self.net.forward(&x, mode)?;
        let (h, w) = (img.height(), img.width());
        let logits = crop_planes(&out, padded, (h, w));
        Ok((logits, ForwardState { caches, padded }))
    }

    pub(crate) fn backward(&self, state: &ForwardState, grad: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        let [c, h, w] = grad.dims::<3>("segmenter grad")?;
        let (ph, pw) = state.padded;
        let mut full = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for y in 0..h {
                let src = &grad.data()[(ch * h + y) * w..][..w];
                full.data_mut()[(ch * ph + y) * pw..][..w].copy_from_slice(src);
            }
        }
        self.net.backward(&state.caches, &full, grads)?;
        Ok(())
    }

    pub fn logits(&self, img: &Image) -> Result<Tensor> {
        Ok(self.forward(img, Mode::Eval)?.0)
    }

    /// Argmax mask and per-pixel max softmax probability.
    pub fn predict(&self, img: &Image) -> Result<(LayoutMask, Vec<f64>)> {
        let logits = self.logits(img)?;
        let (h, w) = (img.height(), img.width());
        let plane = h * w;
        let x = logits.data();
        let mut labels = Vec::with_capacity(plane);
        let mut conf = Vec::with_capacity(plane);
        for p in 0..plane {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if x[k * plane + p] > x[best * plane + p] {
                    best = k;
                }
            }
            let max = x[best * plane + p];
            let z: f64 = (0..NUM_CLASSES).map(|k| (x[k * plane + p] - max).exp()).sum();
            labels.push(best as u8);
            conf.push(1.0 / z);
        }
        Ok((LayoutMask::new(w, h, labels)?, conf))
    }

    pub fn confidence(&self, img: &Image, scope: ConfidenceScope) -> Result<(LayoutMask, f64)> {
        let (mask, conf) = self.predict(img)?;
        let c = avg_confidence(&conf, &mask, scope);
        Ok((mask, c))
    }

    pub fn to_checkpoint(&self, history: serde_json::Value, extra: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint::from_model(
            KIND,
            serde_json::to_value(&self.config)?,
            self,
            history,
            extra,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(KIND)?;
        let config: SegmenterConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::Checkpoint(format!("segmenter config: {e}")))?;
        let mut model = Self::new(config)?;
        ckpt.restore_into(&mut model)?;
        Ok(model)
    }
}

impl Clone for Segmenter {
    fn clone(&self) -> Self {
        let mut copy = Self::new(self.config.clone()).expect("config already validated");
        for (dst, src) in copy.params_mut().into_iter().zip(self.params()) {
            *dst = src.clone();
        }
        copy
    }
}

impl Parameterized for Segmenter {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

fn crop_planes(t: &Tensor, (ph, pw): (usize, usize), (h, w): (usize, usize)) -> Tensor {
    let c = t.shape()[0];
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            out.data_mut()[(ch * h + y) * w..][..w].copy_from_slice(&t.data()[(ch * ph + y) * pw..][..w]);
        }
    }
    out
}
