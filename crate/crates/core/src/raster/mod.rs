//! Image primitives shared by every pipeline: the 8-bit raster type, PNG I/O,
//! Perlin texture generation and the resize/pad/blackout transforms.

mod perlin;
mod png_io;

pub use perlin::{perlin, perlin_texture, perlin_with, NoiseParams, Permutation};
pub use png_io::{decode_indexed_png, decode_png, encode_indexed_png, encode_png, load_png, save_png};

use crate::{Error, Result};

/// Row-major 8-bit raster with one (gray) or three (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Constant-valued grayscale image. Panics on zero dimensions.
    pub fn filled_gray(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, 1, vec![value; width * height]).expect("positive dimensions")
    }

    /// Constant-valued RGB image. Panics on zero dimensions.
    pub fn filled_rgb(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, 3, data).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Luma conversion (ITU-R 601 weights); gray images are returned as-is.
    pub fn to_gray(&self) -> Image {
        if self.is_gray() {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                l.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Image::new(self.width, self.height, 1, data).expect("same dimensions")
    }

    /// Columns `[x0, x1)` as a new image.
    pub fn crop_columns(&self, x0: usize, x1: usize) -> Result<Image> {
        self.crop(x0, 0, x1, self.height)
    }

    /// Rows `[y0, y1)` as a new image.
    pub fn crop_rows(&self, y0: usize, y1: usize) -> Result<Image> {
        self.crop(0, y0, self.width, y1)
    }

    /// The half-open rectangle `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Image> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop [{x0},{x1})x[{y0},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0) * c);
        for y in y0..y1 {
            let row = (y * self.width) * c;
            data.extend_from_slice(&self.data[row + x0 * c..row + x1 * c]);
        }
        Image::new(x1 - x0, y1 - y0, c, data)
    }
}

/// Mirror left to right.
pub fn flip_horizontal(img: &Image) -> Image {
    let c = img.channels;
    let mut out = img.clone();
    for y in 0..img.height {
        let row = y * img.width * c;
        for x in 0..img.width {
            let src = row + (img.width - 1 - x) * c;
            out.data[row + x * c..row + (x + 1) * c].copy_from_slice(&img.data[src..src + c]);
        }
    }
    out
}

/// Interpolation used by [`resize_height`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Width that preserves the aspect ratio when scaling `height` to `target_h`.
pub fn scaled_width(width: usize, height: usize, target_h: usize) -> usize {
    ((width as f64 * target_h as f64 / height as f64).round() as usize).max(1)
}

/// Scale to `target_h` rows, keeping the aspect ratio.
///
/// Sample centres are aligned (`src = (dst + 0.5) * scale - 0.5`), so the
/// identity size maps every pixel to itself in both modes.
pub fn resize_height(img: &Image, target_h: usize, mode: Interpolation) -> Result<Image> {
    if target_h == 0 {
        return Err(Error::InvalidArgument("target height must be >= 1".into()));
    }
    let out_w = scaled_width(img.width, img.height, target_h);
    resize(img, out_w, target_h, mode)
}

pub fn resize(img: &Image, out_w: usize, out_h: usize, mode: Interpolation) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("output dimensions must be >= 1".into()));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let c = img.channels;
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let mut data = vec![0u8; out_w * out_h * c];
    match mode {
        Interpolation::Nearest => {
            let xs: Vec<usize> = (0..out_w)
                .map(|x| (((x as f64 + 0.5) * sx).floor() as usize).min(img.width - 1))
                .collect();
            for y in 0..out_h {
                let src_y = (((y as f64 + 0.5) * sy).floor() as usize).min(img.height - 1);
                for (x, &src_x) in xs.iter().enumerate() {
                    for ch in 0..c {
                        data[(y * out_w + x) * c + ch] = img.get(src_x, src_y, ch);
                    }
                }
            }
        }
        Interpolation::Bilinear => {
            let taps = |dst: usize, scale: f64, len: usize| {
                let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            };
            let xs: Vec<_> = (0..out_w).map(|x| taps(x, sx, img.width)).collect();
            for y in 0..out_h {
                let (y0, y1, fy) = taps(y, sy, img.height);
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    for ch in 0..c {
                        let top = img.get(x0, y0, ch) as f64 * (1.0 - fx) + img.get(x1, y0, ch) as f64 * fx;
                        let bot = img.get(x0, y1, ch) as f64 * (1.0 - fx) + img.get(x1, y1, ch) as f64 * fx;
                        let v = top * (1.0 - fy) + bot * fy;
                        data[(y * out_w + x) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    Image::new(out_w, out_h, c, data)
}

/// Extend to `target_w` columns with `fill`; returns the first padded column.
pub fn pad_right(img: &Image, target_w: usize, fill: u8) -> Result<(Image, usize)> {
    if target_w < img.width {
        return Err(Error::InvalidArgument(format!(
            "pad target {target_w} is narrower than image width {}",
            img.width
        )));
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(target_w * img.height * c);
    for y in 0..img.height {
        let row = y * img.width * c;
        data.extend_from_slice(&img.data[row..row + img.width * c]);
        data.resize(data.len() + (target_w - img.width) * c, fill);
    }
    Ok((Image::new(target_w, img.height, c, data)?, img.width))
}

/// Paint every column at or after `from_x` black.
pub fn blackout_from(img: &Image, from_x: usize) -> Result<Image> {
    if from_x > img.width {
        return Err(Error::InvalidArgument(format!(
            "blackout start {from_x} beyond width {}",
            img.width
        )));
    }
    let mut out = img.clone();
    let c = img.channels;
    for y in 0..img.height {
        let row = y * img.width * c;
        out.data[row + from_x * c..row + img.width * c].fill(0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, data: Vec<u8>) -> Image {
        Image::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn horizontal_flip() {
        let img = Image::new(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(flip_horizontal(&img).data(), &[3, 2, 1, 6, 5, 4]);
        let rgb = Image::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(flip_horizontal(&rgb).data(), &[4, 5, 6, 1, 2, 3]);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn resize_halves_exactly() {
        let img = Image::filled_gray(64, 32, 7);
        let out = resize_height(&img, 16, Interpolation::Bilinear).unwrap();
        assert_eq!((out.width(), out.height()), (32, 16));
        let img = Image::filled_gray(32, 64, 7);
        let out = resize_height(&img, 32, Interpolation::Bilinear).unwrap();
        assert_eq!((out.width(), out.height()), (16, 32));
    }

    #[test]
    fn resize_identity_in_nearest_mode() {
        let img = gray(3, 2, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(resize_height(&img, 2, Interpolation::Nearest).unwrap(), img);
    }

    #[test]
    fn nearest_upscale_duplicates_checkerboard() {
        let board: Vec<u8> = (0..9).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
        let img = gray(3, 3, board.clone());
        let out = resize_height(&img, 6, Interpolation::Nearest).unwrap();
        assert_eq!((out.width(), out.height()), (6, 6));
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.get(x, y, 0), board[(y / 2) * 3 + x / 2]);
            }
        }
    }

    #[test]
    fn pad_right_fills_suffix() {
        let img = Image::filled_gray(50, 4, 9);
        let (out, start) = pad_right(&img, 80, 255).unwrap();
        assert_eq!(start, 50);
        assert_eq!(out.width(), 80);
        for y in 0..4 {
            assert!((0..50).all(|x| out.get(x, y, 0) == 9));
            assert!((50..80).all(|x| out.get(x, y, 0) == 255));
        }
        let (same, start) = pad_right(&img, 50, 255).unwrap();
        assert_eq!((same, start), (img.clone(), 50));
        assert!(pad_right(&img, 49, 0).is_err());
    }

    #[test]
    fn blackout_edges() {
        let img = Image::filled_gray(5, 2, 200);
        assert_eq!(blackout_from(&img, 5).unwrap(), img);
        assert!(blackout_from(&img, 0).unwrap().data().iter().all(|&v| v == 0));
        assert!(blackout_from(&img, 6).is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |d| Image::new(w, h, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pad_then_blackout_keeps_prefix(img in arb_image(), extra in 0usize..10, fill in any::<u8>()) {
            let (padded, start) = pad_right(&img, img.width() + extra, fill).unwrap();
            let out = blackout_from(&padded, start).unwrap();
            for y in 0..img.height() {
                for x in 0..out.width() {
                    for c in 0..img.channels() {
                        let want = if x < img.width() { img.get(x, y, c) } else { 0 };
                        prop_assert_eq!(out.get(x, y, c), want);
                        if x >= img.width() {
                            prop_assert_eq!(padded.get(x, y, c), fill);
                        }
                    }
                }
            }
        }

        #[test]
        fn resize_keeps_aspect_within_rounding(w in 1usize..200, h in 1usize..200, th in 1usize..64) {
            let img = Image::filled_gray(w, h, 0);
            let out = resize_height(&img, th, Interpolation::Nearest).unwrap();
            prop_assert_eq!(out.height(), th);
            let exact = w as f64 * th as f64 / h as f64;
            prop_assert!((out.width() as f64 - exact).abs() <= 1.0);
        }

        #[test]
        fn nearest_introduces_no_new_values(img in arb_image(), th in 1usize..24) {
            let out = resize_height(&img, th, Interpolation::Nearest).unwrap();
            for ch in 0..img.channels() {
                let src: std::collections::HashSet<u8> =
                    (0..img.height()).flat_map(|y| (0..img.width()).map(move |x| (x, y))).map(|(x, y)| img.get(x, y, ch)).collect();
                for y in 0..out.height() {
                    for x in 0..out.width() {
                        prop_assert!(src.contains(&out.get(x, y, ch)));
                    }
                }
            }
        }
    }
}
