use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::{seed, Error, Result};

/// Seeded 256-entry permutation table, stored twice so lattice lookups never wrap.
#[derive(Clone, Debug)]
pub struct Permutation {
    table: [u8; 512],
}

impl Permutation {
    pub fn new(seed: u64) -> Self {
        let mut base: Vec<u8> = (0..=255).collect();
        base.shuffle(&mut seed::rng(seed));
        let mut table = [0u8; 512];
        for (i, slot) in table.iter_mut().enumerate() {
            *slot = base[i & 255];
        }
        Self { table }
    }

    #[inline]
    pub fn at(&self, i: usize) -> usize {
        self.table[i] as usize
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

/// Dot product with one of the four diagonal gradients.
#[inline]
fn grad(hash: usize, x: f64, y: f64) -> f64 {
    match hash & 3 {
        0 => x + y,
        1 => -x + y,
        2 => -x - y,
        _ => x - y,
    }
}

/// Classic 2-D Perlin noise with a precomputed permutation. Output lies in [-1, 1].
pub fn perlin_with(perm: &Permutation, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let xi = (fx as i64 & 255) as usize;
    let yi = (fy as i64 & 255) as usize;
    let (xf, yf) = (x - fx, y - fy);
    let (u, v) = (fade(xf), fade(yf));

    let aa = perm.at(perm.at(xi) + yi);
    let ab = perm.at(perm.at(xi) + yi + 1);
    let ba = perm.at(perm.at(xi + 1) + yi);
    let bb = perm.at(perm.at(xi + 1) + yi + 1);

    let left = lerp(v, grad(aa, xf, yf), grad(ab, xf, yf - 1.0));
    let right = lerp(v, grad(ba, xf - 1.0, yf), grad(bb, xf - 1.0, yf - 1.0));
    lerp(u, left, right)
}

/// Classic 2-D Perlin noise. Zero at every integer lattice point.
pub fn perlin(x: f64, y: f64, seed: u64) -> f64 {
    perlin_with(&Permutation::new(seed), x, y)
}

/// Multi-octave texture parameters. Octave `k` uses cell size
/// `cell_scale / 2^k`, weight `persistence^k` and permutation seed `seed + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub cell_scale: f64,
    pub octaves: u32,
    pub persistence: f64,
    pub seed: u64,
    pub bias: u8,
    pub amplitude: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            cell_scale: 32.0,
            octaves: 3,
            persistence: 0.5,
            seed: 0,
            bias: 225,
            amplitude: 30.0,
        }
    }
}

impl NoiseParams {
    /// A flat background of `bias` with no texture.
    pub fn flat(bias: u8) -> Self {
        Self {
            amplitude: 0.0,
            bias,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 {
            return Err(Error::InvalidArgument("noise octaves must be >= 1".into()));
        }
        if !(self.cell_scale > 0.0) {
            return Err(Error::InvalidArgument("noise cell_scale must be > 0".into()));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::InvalidArgument("noise persistence must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Grayscale texture `clamp(bias + amplitude * sum_k persistence^k * perlin(...))`.
pub fn perlin_texture(w: usize, h: usize, p: &NoiseParams) -> Result<Image> {
    p.validate()?;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("texture dimensions must be >= 1".into()));
    }
    if p.amplitude == 0.0 {
        return Ok(Image::filled_gray(w, h, p.bias));
    }
    let octaves: Vec<(Permutation, f64, f64)> = (0..p.octaves)
        .map(|k| {
            let scale = p.cell_scale / f64::powi(2.0, k as i32);
            (
                Permutation::new(p.seed.wrapping_add(k as u64)),
                scale,
                p.persistence.powi(k as i32),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sum: f64 = octaves
                .iter()
                .map(|(perm, scale, weight)| weight * perlin_with(perm, x as f64 / scale, y as f64 / scale))
                .sum();
            let v = p.bias as f64 + p.amplitude * sum;
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(w, h, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straight-line classic Perlin written independently of `perlin_with`:
    /// explicit corner loop, explicit gradient table, smoothstep polynomial.
    fn reference_perlin(x: f64, y: f64, seed: u64) -> f64 {
        let perm = Permutation::new(seed);
        let p = |i: i64| perm.at(i.rem_euclid(512) as usize) as i64;
        let gradients = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        let x0 = x.floor() as i64;
        let y0 = y.floor() as i64;
        let s = |t: f64| 6.0 * t.powi(5) - 15.0 * t.powi(4) + 10.0 * t.powi(3);
        let mut corners = [[0.0; 2]; 2];
        for (dx, row) in corners.iter_mut().enumerate() {
            for (dy, slot) in row.iter_mut().enumerate() {
                let cx = (x0 & 255) + dx as i64;
                let cy = (y0 & 255) + dy as i64;
                let h = p(p(cx) + cy) as usize;
                let (gx, gy) = gradients[h % 4];
                *slot = gx * (x - (x0 + dx as i64) as f64) + gy * (y - (y0 + dy as i64) as f64);
            }
        }
        let (u, v) = (s(x - x0 as f64), s(y - y0 as f64));
        let bottom = corners[0][0] * (1.0 - u) + corners[1][0] * u;
        let top = corners[0][1] * (1.0 - u) + corners[1][1] * u;
        bottom * (1.0 - v) + top * v
    }

    #[test]
    fn vanishes_on_lattice() {
        assert_eq!(perlin(3.0, 7.0, 1), 0.0);
        for s in 0..5 {
            for i in -20..20 {
                assert_eq!(perlin(i as f64, (i * 3) as f64, s), 0.0);
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(perlin(0.3, 9.7, 11), perlin(0.3, 9.7, 11));
    }

    #[test]
    fn matches_reference_at_cell_centre() {
        let got = perlin(0.5, 0.5, 1);
        let want = reference_perlin(0.5, 0.5, 1);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn matches_reference_and_stays_bounded() {
        let mut rng = seed::rng(5);
        for i in 0..10_000 {
            let x = rng.gen_range(-300.0..300.0);
            let y = rng.gen_range(-300.0..300.0);
            let v = perlin(x, y, i % 7);
            assert!(v.abs() <= 1.0, "{v} at ({x},{y})");
            if i % 50 == 0 {
                assert!((v - reference_perlin(x, y, i % 7)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn continuous() {
        let a = perlin(2.3, 4.1, 3);
        let b = perlin(2.3 + 1e-9, 4.1, 3);
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let img = perlin_texture(9, 4, &NoiseParams::flat(77)).unwrap();
        assert!(img.data().iter().all(|&v| v == 77));
    }

    #[test]
    fn texture_matches_formula() {
        let p = NoiseParams {
            cell_scale: 8.0,
            octaves: 1,
            persistence: 0.5,
            seed: 42,
            bias: 128,
            amplitude: 100.0,
        };
        let img = perlin_texture(16, 16, &p).unwrap();
        assert_eq!(img, perlin_texture(16, 16, &p).unwrap());
        for y in 0..16 {
            for x in 0..16 {
                let v = 128.0 + 100.0 * reference_perlin(x as f64 / 8.0, y as f64 / 8.0, 42);
                assert_eq!(img.get(x, y, 0), v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    #[test]
    fn texture_validates_params() {
        let bad = NoiseParams {
            octaves: 0,
            ..NoiseParams::default()
        };
        assert!(perlin_texture(4, 4, &bad).is_err());
        let bad = NoiseParams {
            cell_scale: 0.0,
            ..NoiseParams::default()
        };
        assert!(perlin_texture(4, 4, &bad).is_err());
    }
}
