use serde::{Deserialize, Serialize};

use crate::ctc::Alphabet;
use crate::net::Tensor;
use crate::raster::{blackout_from, flip_horizontal, pad_right, resize_height, Image, Interpolation};
use crate::{Error, Result};

/// Direction in which a line is read. Right-to-left lines are mirrored before
/// the network so that frame order follows text order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingOrder {
    /// Right-to-left when most letters of the alphabet are Hebrew or Arabic.
    #[default]
    Auto,
    Ltr,
    Rtl,
}

fn is_rtl_letter(c: char) -> bool {
    matches!(c as u32, 0x0590..=0x08FF | 0xFB1D..=0xFDFF | 0xFE70..=0xFEFF)
}

impl ReadingOrder {
    pub fn resolve(self, alphabet: &Alphabet) -> ReadingOrder {
        match self {
            ReadingOrder::Auto => {
                let letters = alphabet.symbols().iter().filter(|c| c.is_alphabetic());
                let (rtl, total) = letters.fold((0, 0), |(r, t), &c| (r + is_rtl_letter(c) as usize, t + 1));
                if total > 0 && 2 * rtl > total {
                    ReadingOrder::Rtl
                } else {
                    ReadingOrder::Ltr
                }
            }
            other => other,
        }
    }

    pub fn is_rtl(self) -> bool {
        self == ReadingOrder::Rtl
    }
}

/// A preprocessed batch: `[B, 1, H, Wmax]` in `[0, 1]` plus each image's
/// width before padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tensor: Tensor,
    pub valid_widths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.valid_widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_widths.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }

    /// Sample `i` as a `[1, H, W]` tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let [_, _, h, w] = [0, 1, 2, 3].map(|k| self.tensor.shape()[k]);
        let data = self.tensor.data()[i * h * w..(i + 1) * h * w].to_vec();
        Tensor::new(&[1, h, w], data).expect("slice matches shape")
    }
}

fn scaled(img: &Image, target_height: usize, rtl: bool) -> Result<Image> {
    let s = resize_height(&img.to_gray(), target_height, Interpolation::Bilinear)?;
    Ok(if rtl { flip_horizontal(&s) } else { s })
}

fn to_unit(img: &Image) -> impl Iterator<Item = f64> + '_ {
    img.data().iter().map(|&v| v as f64 / 255.0)
}

/// Resize to the target height, pad with white to the widest image and paint
/// the padding black.
pub fn preprocess_batch(images: &[Image], target_height: usize) -> Result<Batch> {
    preprocess_batch_with(images, target_height, true, false)
}

/// As [`preprocess_batch`], with the blackout step optional and right-to-left
/// lines mirrored first.
pub fn preprocess_batch_with(images: &[Image], target_height: usize, blackout: bool, rtl: bool) -> Result<Batch> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let resized = images
        .iter()
        .map(|img| scaled(img, target_height, rtl))
        .collect::<Result<Vec<_>>>()?;
    let wmax = resized.iter().map(Image::width).max().unwrap_or(1);
    let mut data = Vec::with_capacity(images.len() * target_height * wmax);
    let mut valid_widths = Vec::with_capacity(images.len());
    for img in &resized {
        let (mut padded, start) = pad_right(img, wmax, 255)?;
        if blackout {
            padded = blackout_from(&padded, start)?;
        }
        data.extend(to_unit(&padded));
        valid_widths.push(start);
    }
    Ok(Batch {
        tensor: Tensor::new(&[images.len(), 1, target_height, wmax], data)?,
        valid_widths,
    })
}

/// One line at the target height with no padding, as `[1, H, W]`.
pub fn line_tensor(img: &Image, target_height: usize, rtl: bool) -> Result<Tensor> {
    let s = scaled(img, target_height, rtl)?;
    Tensor::new(&[1, target_height, s.width()], to_unit(&s).collect())
}
