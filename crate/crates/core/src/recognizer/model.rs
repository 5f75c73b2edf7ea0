use serde::{Deserialize, Serialize};

use crate::ctc::{Alphabet, Decoder, LogitsSequence};
use crate::net::{
    AdaptiveAvgPoolHeight, BiLstm, Cache, Checkpoint, ColumnsToSequence, Conv2d, Dropout, Linear, LogSoftmax,
    MaxPool2d, Mode, Param, Parameterized, Relu, Sequential, Tensor,
};
use crate::raster::Image;
use crate::{seed, Error, Result};

use super::preprocess::{line_tensor, ReadingOrder};

pub(crate) const KIND: &str = "crnn";

/// One convolutional block: `kernel x kernel` conv with same padding, ReLU,
/// then an optional `pool[0] x pool[1]` (height x width) max pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: [usize; 2],
}

impl ConvBlock {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, pool: [usize; 2]) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            pool,
        }
    }

    fn out_len(&self, n: usize, pool: usize) -> Option<usize> {
        let pad = self.kernel / 2;
        let conv = (n + 2 * pad).checked_sub(self.kernel)? / self.stride + 1;
        Some(conv / pool)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub conv_spec: Vec<ConvBlock>,
    /// LSTM units per direction.
    pub hidden_size: usize,
    pub dropout_p: f64,
    /// Alphabet size plus the blank; 0 means "take it from the alphabet".
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            conv_spec: vec![ConvBlock::new(16, 3, 1, [2, 2]), ConvBlock::new(32, 3, 1, [2, 2])],
            hidden_size: 32,
            dropout_p: 0.2,
            num_classes: 0,
            seed: 42,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.conv_spec.is_empty() {
            return bad("conv_spec needs at least one block".into());
        }
        for (i, b) in self.conv_spec.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 || b.pool.contains(&0) {
                return bad(format!("conv block {i}: channels, kernel, stride and pool must be >= 1"));
            }
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.num_classes == 1 {
            return bad("num_classes must cover the blank and at least one symbol".into());
        }
        Ok(())
    }

    /// Output `(height, width)` of the conv stack, if every stage stays non-empty.
    pub fn feature_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let mut hw = (h, w);
        for b in &self.conv_spec {
            hw = (b.out_len(hw.0, b.pool[0])?, b.out_len(hw.1, b.pool[1])?);
            if hw.0 == 0 || hw.1 == 0 {
                return None;
            }
        }
        Some(hw)
    }
}

/// Everything needed to rebuild a recognizer from a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrnnConfig {
    pub net: NetConfig,
    pub alphabet: Alphabet,
    pub target_height: usize,
    /// Resolved; never `Auto`.
    pub reading_order: ReadingOrder,
}

/// Conv stack, height pooling, BiLSTM, dropout, per-frame linear classifier
/// and log-softmax.
pub struct Crnn {
    pub config: CrnnConfig,
    net: Sequential,
}

impl Crnn {
    pub fn new(
        mut net_cfg: NetConfig,
        alphabet: Alphabet,
        target_height: usize,
        reading_order: ReadingOrder,
    ) -> Result<Self> {
        let reading_order = reading_order.resolve(&alphabet);
        if net_cfg.num_classes == 0 {
            net_cfg.num_classes = alphabet.num_classes();
        }
        net_cfg.validate()?;
        if net_cfg.num_classes != alphabet.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "num_classes {} does not match alphabet ({} symbols + blank)",
                net_cfg.num_classes,
                alphabet.symbols().len()
            )));
        }
        if target_height == 0 || net_cfg.feature_size(target_height, usize::MAX / 4).is_none() {
            return Err(Error::InvalidArgument(format!(
                "target height {target_height} vanishes in the conv stack"
            )));
        }
        let mut rng = seed::rng(seed::derive(net_cfg.seed, &[0xc7]));
        let mut net = Sequential::default();
        let mut channels = 1;
        for b in &net_cfg.conv_spec {
            net.push(Conv2d::new(channels, b.out_channels, b.kernel, b.stride, b.kernel / 2, &mut rng));
            net.push(Relu);
            if b.pool != [1, 1] {
                net.push(MaxPool2d {
                    ph: b.pool[0],
                    pw: b.pool[1],
                });
            }
            channels = b.out_channels;
        }
        net.push(AdaptiveAvgPoolHeight);
        net.push(ColumnsToSequence);
        net.push(BiLstm::new(channels, net_cfg.hidden_size, &mut rng));
        net.push(Dropout { p: net_cfg.dropout_p });
        net.push(Linear::new(2 * net_cfg.hidden_size, net_cfg.num_classes, &mut rng));
        net.push(LogSoftmax);
        Ok(Self {
            config: CrnnConfig {
                net: net_cfg,
                alphabet,
                target_height,
                reading_order,
            },
            net,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.config.alphabet
    }

    pub fn is_rtl(&self) -> bool {
        self.config.reading_order.is_rtl()
    }

    /// Frames produced for an input `width` columns wide at the target height.
    pub fn frames(&self, width: usize) -> usize {
        self.config
            .net
            .feature_size(self.config.target_height, width)
            .map_or(0, |(_, w)| w)
    }

    /// Forward a `[1, H, W]` tensor to per-frame log-probabilities.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(LogitsSequence, Vec<Cache>)> {
        let (out, caches) = self.net.forward(x, mode)?;
        let [t, c] = out.dims::<2>("crnn output")?;
        Ok((LogitsSequence::from_raw(t, c, out.into_data())?, caches))
    }

    /// Backpropagate `d loss / d log-probs` (`[T, C]`) into `grads`.
    pub fn backward(&self, caches: &[Cache], grad: Vec<f64>, grads: &mut [Tensor]) -> Result<()> {
        let c = self.config.net.num_classes;
        let g = Tensor::new(&[grad.len() / c, c], grad)?;
        self.net.backward(caches, &g, grads)?;
        Ok(())
    }

    pub fn log_probs(&self, img: &Image) -> Result<LogitsSequence> {
        let x = line_tensor(img, self.config.target_height, self.is_rtl())?;
        Ok(self.forward(&x, Mode::Eval)?.0)
    }

    pub fn transcribe(&self, img: &Image, decoder: &dyn Decoder) -> Result<String> {
        Ok(decoder.decode_text(&self.log_probs(img)?, self.alphabet()))
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
        let config: CrnnConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::Checkpoint(format!("crnn config: {e}")))?;
        let mut model = Self::new(config.net, config.alphabet, config.target_height, config.reading_order)?;
        ckpt.restore_into(&mut model)?;
        Ok(model)
    }
}

impl Clone for Crnn {
    fn clone(&self) -> Self {
        let c = &self.config;
        let mut copy = Self::new(c.net.clone(), c.alphabet.clone(), c.target_height, c.reading_order)
            .expect("config already validated");
        for (dst, src) in copy.params_mut().into_iter().zip(self.params()) {
            *dst = src.clone();
        }
        copy
    }
}

impl Parameterized for Crnn {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}
