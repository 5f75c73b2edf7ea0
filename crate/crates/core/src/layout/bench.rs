use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledPage, LayoutClass, LayoutMask, PageOrigin, UnlabeledPage};
use crate::raster::Image;
use crate::{seed, Error, Result};

/// Synthetic low-label layout benchmark: pages of textured rectangular bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub width: usize,
    pub height: usize,
    pub labeled: usize,
    pub pool: usize,
    pub val: usize,
    pub test: usize,
    /// Peak amplitude of uniform per-pixel noise, in gray levels.
    pub noise: f64,
    /// Peak per-page shift of paper and ink colours.
    pub style_jitter: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            labeled: 10,
            pool: 100,
            val: 80,
            test: 100,
            noise: 40.0,
            style_jitter: 40.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayoutBenchmark {
    pub labeled: Vec<LabeledPage>,
    pub pool: Vec<UnlabeledPage>,
    pub val: Vec<LabeledPage>,
    pub test: Vec<LabeledPage>,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidArgument("benchmark pages must be at least 32x32".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.style_jitter >= 0.0 && self.style_jitter.is_finite()) {
            return Err(Error::InvalidArgument("benchmark noise and jitter must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl LayoutBenchmark {
    pub fn generate(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let labeled_set = |tag: &str, part: u64, n: usize| -> Result<Vec<LabeledPage>> {
            (0..n)
                .map(|i| {
                    let (image, mask) = benchmark_page(cfg, seed::derive(seed, &[part, i as u64]))?;
                    Ok(LabeledPage {
                        stem: format!("{tag}{i:04}"),
                        image,
                        mask,
                        origin: PageOrigin::GroundTruth,
                    })
                })
                .collect()
        };
        let pool = (0..cfg.pool)
            .map(|i| {
                Ok(UnlabeledPage {
                    stem: format!("pool{i:04}"),
                    image: benchmark_page(cfg, seed::derive(seed, &[1, i as u64]))?.0,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            labeled: labeled_set("lab", 0, cfg.labeled)?,
            pool,
            val: labeled_set("val", 2, cfg.val)?,
            test: labeled_set("test", 3, cfg.test)?,
        })
    }
}

/// Ink colour and line pitch per class.
fn style(class: LayoutClass) -> ([f64; 3], usize, usize) {
    match class {
        LayoutClass::Heading => ([120.0, 30.0, 30.0], 4, 2),
        LayoutClass::Paragraph => ([60.0, 50.0, 40.0], 3, 1),
        LayoutClass::Marginalia => ([70.0, 70.0, 130.0], 4, 1),
        _ => ([0.0, 0.0, 0.0], 2, 1),
    }
}

/// One page of paper with a heading strip, a paragraph block and an optional marginal column.
pub fn benchmark_page(cfg: &BenchmarkConfig, page_seed: u64) -> Result<(Image, LayoutMask)> {
    cfg.validate()?;
    let mut rng = seed::rng(page_seed);
    let (w, h) = (cfg.width, cfg.height);
    let mut mask = LayoutMask::filled(w, h, LayoutClass::Background);
    let margin_left = rng.gen_bool(0.5);
    let mw = rng.gen_range(w / 6..=w / 4);
    let gap = 3;
    let (body_x0, body_x1) = if margin_left {
        (mw + gap + 2, w - 2)
    } else {
        (2, w - mw - gap - 2)
    };
    let head_y0 = rng.gen_range(2..=5);
    let head_y1 = head_y0 + rng.gen_range(4..=6);
    let para_y0 = head_y1 + rng.gen_range(3..=5);
    let para_y1 = h - rng.gen_range(2..=6);
    let head_x1 = rng.gen_range(body_x0 + (body_x1 - body_x0) / 2..=body_x1);
    mask.fill_rect(body_x0, head_y0, head_x1, head_y1, LayoutClass::Heading);
    mask.fill_rect(body_x0, para_y0, body_x1, para_y1, LayoutClass::Paragraph);
    if rng.gen_bool(0.8) {
        let (mx0, mx1) = if margin_left { (1, 1 + mw) } else { (w - 1 - mw, w - 1) };
        let my0 = rng.gen_range(para_y0..para_y0 + (para_y1 - para_y0) / 2);
        let my1 = rng.gen_range(my0 + 4..=para_y1);
        mask.fill_rect(mx0, my0, mx1, my1, LayoutClass::Marginalia);
    }
    let image = render(&mask, cfg.noise, cfg.style_jitter, &mut rng);
    Ok((image, mask))
}

fn render(mask: &LayoutMask, noise: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (mask.width(), mask.height());
    let shift = |rng: &mut ChaCha8Rng| if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
    let tint = shift(rng);
    let paper = [225.0 + tint + shift(rng) / 4.0, 215.0 + tint, 190.0 + tint - shift(rng) / 4.0];
    let ink_shift: [f64; 3] = std::array::from_fn(|_| shift(rng));
    let mut img = Image::filled_rgb(w, h, [0, 0, 0]);
    let phase: [usize; 9] = std::array::from_fn(|_| rng.gen_range(0..4));
    for y in 0..h {
        for x in 0..w {
            let class = LayoutClass::from_id(mask.get(x, y)).expect("valid mask");
            let (mut ink, pitch, thick) = style(class);
            for (v, d) in ink.iter_mut().zip(ink_shift) {
                *v += d;
            }
            let on_line = class != LayoutClass::Background && (y + phase[class.id() as usize]) % pitch < thick;
            // Gaps between "words".
            let in_word = (x * 7 + y * 3 + phase[0]) % 11 < 8;
            let base = if on_line && in_word { ink } else { paper };
            let n = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
            for (c, &b) in base.iter().enumerate() {
                img.set(x, y, c, (b + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    img
}
