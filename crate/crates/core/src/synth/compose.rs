use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GlyphSet;
use crate::raster::{perlin_texture, Image, NoiseParams};
use crate::{seed, Error, Result};

/// How glyph variants are chosen when a class has several.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantMode {
    /// Seeded uniform choice per character.
    #[default]
    Uniform,
    /// Every page is rendered once per variant index, all characters using that variant.
    PerVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionParams {
    pub letter_spacing: usize,
    pub space_width: usize,
    pub wave_amplitude: f64,
    pub wave_frequency: f64,
    pub line_height: usize,
    pub margin: usize,
    pub noise: NoiseParams,
    pub variant_seed: u64,
    pub variant_mode: VariantMode,
    /// Wrap width in characters.
    pub max_line_chars: usize,
    pub lines_per_page: usize,
}

impl Default for CompositionParams {
    fn default() -> Self {
        Self {
            letter_spacing: 3,
            space_width: 10,
            wave_amplitude: 2.0,
            wave_frequency: 1.0 / 200.0,
            line_height: 40,
            margin: 16,
            noise: NoiseParams::default(),
            variant_seed: 0,
            variant_mode: VariantMode::Uniform,
            max_line_chars: 12,
            lines_per_page: 8,
        }
    }
}

impl CompositionParams {
    pub fn validate(&self, glyphs: &GlyphSet) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.space_width < 1 {
            return bad("space_width must be >= 1".into());
        }
        if !(self.wave_amplitude >= 0.0 && self.wave_amplitude.is_finite()) {
            return bad("wave_amplitude must be finite and >= 0".into());
        }
        if !(self.wave_frequency >= 0.0 && self.wave_frequency.is_finite()) {
            return bad("wave_frequency must be finite and >= 0".into());
        }
        if self.line_height < glyphs.max_height() {
            return bad(format!(
                "line_height {} is below the tallest glyph ({})",
                self.line_height,
                glyphs.max_height()
            ));
        }
        if self.max_line_chars < 1 || self.lines_per_page < 1 {
            return bad("max_line_chars and lines_per_page must be >= 1".into());
        }
        self.noise.validate()
    }

    /// Vertical wave offset for a glyph whose left edge is at `x`.
    pub fn wave_offset(&self, x: f64) -> i64 {
        (self.wave_amplitude * (2.0 * std::f64::consts::PI * self.wave_frequency * x).sin()).round() as i64
    }
}

/// Where one glyph landed on the canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub ch: char,
    pub variant: usize,
    pub x: i64,
    pub y: i64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposedLine {
    pub text: String,
    /// Inclusive ink rows.
    pub y_top: usize,
    pub y_bottom: usize,
    pub glyphs: Vec<Placement>,
}

#[derive(Clone, Debug)]
pub struct ComposedPage {
    pub image: Image,
    pub lines: Vec<ComposedLine>,
}

/// Render `lines` right to left onto a textured canvas.
///
/// `seed` perturbs both the noise texture and the variant choice. `forced_variant`
/// pins every character to `variant % count` instead of drawing one.
pub fn compose_page(
    lines: &[String],
    glyphs: &GlyphSet,
    params: &CompositionParams,
    seed: u64,
) -> Result<ComposedPage> {
    compose_with(lines, glyphs, params, seed, None)
}

pub(crate) fn compose_with(
    lines: &[String],
    glyphs: &GlyphSet,
    params: &CompositionParams,
    page_seed: u64,
    forced_variant: Option<usize>,
) -> Result<ComposedPage> {
    params.validate(glyphs)?;
    if lines.is_empty() {
        return Err(Error::InvalidArgument("page has no lines".into()));
    }
    let mut rng = seed::rng(seed::derive(params.variant_seed, &[page_seed]));

    // Resolve glyphs and per-line pixel widths first.
    let mut chosen: Vec<Vec<Option<(usize, &Image)>>> = Vec::with_capacity(lines.len());
    let mut need = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            return Err(Error::InvalidArgument("page contains an empty line".into()));
        }
        let mut row = Vec::new();
        let mut width = 0usize;
        let mut prev_glyph = false;
        for c in line.chars() {
            if c == ' ' {
                row.push(None);
                width += params.space_width;
                prev_glyph = false;
                continue;
            }
            let vs = glyphs.variants(c)?;
            let v = match forced_variant {
                Some(f) => f % vs.len(),
                None if vs.len() == 1 => 0,
                None => rng.gen_range(0..vs.len()),
            };
            if prev_glyph {
                width += params.letter_spacing;
            }
            width += vs[v].width();
            row.push(Some((v, &vs[v])));
            prev_glyph = true;
        }
        need = need.max(width);
        chosen.push(row);
    }

    let nominal = (params.max_line_chars as f64 * (glyphs.mean_width() + params.letter_spacing as f64))
        .ceil() as usize;
    let width = nominal.max(need) + 2 * params.margin;
    let height = lines.len() * params.line_height + 2 * params.margin;
    let mut noise = params.noise.clone();
    noise.seed = seed::derive(noise.seed, &[page_seed]);
    let mut canvas = perlin_texture(width, height, &noise)?;

    let mut out_lines = Vec::with_capacity(lines.len());
    for (i, (line, row)) in lines.iter().zip(&chosen).enumerate() {
        let band_top = (params.margin + i * params.line_height) as i64;
        let mut right = (width - params.margin) as i64;
        let mut prev_glyph = false;
        let mut placements = Vec::new();
        let (mut ink_top, mut ink_bottom) = (i64::MAX, i64::MIN);
        for (c, slot) in line.chars().zip(row) {
            let Some((variant, g)) = *slot else {
                right -= params.space_width as i64;
                prev_glyph = false;
                continue;
            };
            if prev_glyph {
                right -= params.letter_spacing as i64;
            }
            let x = right - g.width() as i64;
            let baseline = ((params.line_height - g.height()) / 2) as i64;
            let y = band_top + baseline + params.wave_offset(x as f64);
            if let Some((t, b)) = blit_min(&mut canvas, g, x, y) {
                ink_top = ink_top.min(t);
                ink_bottom = ink_bottom.max(b);
            }
            placements.push(Placement {
                ch: c,
                variant,
                x,
                y,
                width: g.width(),
                height: g.height(),
            });
            right = x;
            prev_glyph = true;
        }
        if ink_top > ink_bottom {
            // No dark pixel drawn: fall back to the glyph boxes.
            ink_top = placements.iter().map(|p| p.y).min().unwrap_or(band_top);
            ink_bottom = placements
                .iter()
                .map(|p| p.y + p.height as i64 - 1)
                .max()
                .unwrap_or(band_top);
        }
        let clamp = |v: i64| v.clamp(0, height as i64 - 1) as usize;
        out_lines.push(ComposedLine {
            text: line.clone(),
            y_top: clamp(ink_top),
            y_bottom: clamp(ink_bottom),
            glyphs: placements,
        });
    }
    Ok(ComposedPage {
        image: canvas,
        lines: out_lines,
    })
}

/// Darken `canvas` with `glyph` at (x, y); returns the inclusive rows holding ink (< 128).
fn blit_min(canvas: &mut Image, glyph: &Image, x: i64, y: i64) -> Option<(i64, i64)> {
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    let mut ink: Option<(i64, i64)> = None;
    for gy in 0..glyph.height() {
        let cy = y + gy as i64;
        if cy < 0 || cy >= ch {
            continue;
        }
        for gx in 0..glyph.width() {
            let cx = x + gx as i64;
            if cx < 0 || cx >= cw {
                continue;
            }
            let g = glyph.get(gx, gy, 0);
            let (ux, uy) = (cx as usize, cy as usize);
            let v = canvas.get(ux, uy, 0).min(g);
            canvas.set(ux, uy, 0, v);
            if g < 128 {
                ink = Some(match ink {
                    None => (cy, cy),
                    Some((t, b)) => (t.min(cy), b.max(cy)),
                });
            }
        }
    }
    ink
}
