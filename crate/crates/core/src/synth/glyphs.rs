use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::raster::{load_png, Image};
use crate::{seed, Error, Result};

/// The 22 Hebrew letters followed by the five final forms.
pub const HEBREW_CLASSES: [char; 27] = [
    'א', 'ב', 'ג', 'ד', 'ה', 'ו', 'ז', 'ח', 'ט', 'י', 'כ', 'ל', 'מ', 'נ', 'ס', 'ע', 'פ', 'צ',
    'ק', 'ר', 'ש', 'ת', 'ך', 'ם', 'ן', 'ף', 'ץ',
];

/// Character classes with one or more grayscale glyph images each.
#[derive(Clone, Debug)]
pub struct GlyphSet {
    classes: Vec<char>,
    variants: Vec<Vec<Image>>,
    index: HashMap<char, usize>,
}

impl GlyphSet {
    pub fn new(entries: Vec<(char, Vec<Image>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("glyph set has no classes".into()));
        }
        let mut classes = Vec::with_capacity(entries.len());
        let mut variants = Vec::with_capacity(entries.len());
        let mut index = HashMap::new();
        for (c, imgs) in entries {
            if c.is_whitespace() {
                return Err(Error::InvalidArgument(format!("whitespace {c:?} cannot be a glyph class")));
            }
            if imgs.is_empty() {
                return Err(Error::InvalidArgument(format!("class {c:?} has no variants")));
            }
            if index.insert(c, classes.len()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate class {c:?}")));
            }
            let imgs: Vec<Image> = imgs.into_iter().map(|g| g.to_gray()).collect();
            classes.push(c);
            variants.push(imgs);
        }
        Ok(Self { classes, variants, index })
    }

    /// Load `dir/<hex codepoint>/*.png`. Directory names may carry a `U+` prefix.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut class_dirs = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let hex = name
                .strip_prefix("U+")
                .or_else(|| name.strip_prefix("u+"))
                .unwrap_or(&name);
            let c = u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("glyph directory {name:?} is not a hex codepoint"))
                })?;
            class_dirs.push((c, path));
        }
        class_dirs.sort();
        let mut entries = Vec::with_capacity(class_dirs.len());
        for (c, path) in class_dirs {
            let mut files: Vec<_> = fs::read_dir(&path)
                .map_err(|e| Error::io(&path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            let imgs = files.iter().map(load_png).collect::<Result<Vec<_>>>()?;
            entries.push((c, imgs));
        }
        Self::new(entries)
    }

    /// Write the set in the on-disk layout read by [`GlyphSet::load_dir`].
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (c, imgs) in self.classes.iter().zip(&self.variants) {
            let sub = dir.join(format!("{:04x}", *c as u32));
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, img) in imgs.iter().enumerate() {
                crate::raster::save_png(img, sub.join(format!("{i:03}.png")))?;
            }
        }
        Ok(())
    }

    /// Stroke-drawn stand-in glyphs, one stable shape per class with jittered variants.
    ///
    /// Every glyph has a full-height stem so each row of a line carries ink.
    pub fn procedural(classes: &[char], height: usize, variants: usize, seed: u64) -> Result<Self> {
        if height < 8 {
            return Err(Error::InvalidArgument("procedural glyph height must be >= 8".into()));
        }
        if variants == 0 {
            return Err(Error::InvalidArgument("need at least one variant per class".into()));
        }
        let entries = classes
            .iter()
            .enumerate()
            .map(|(ci, &c)| {
                let mut shape_rng = seed::rng(seed::derive(seed, &[ci as u64]));
                let h = height as f64;
                let width = shape_rng.gen_range(height / 2..=height * 3 / 4);
                let w = width as f64;
                let stem_x = [0.15, 0.5, 0.85][shape_rng.gen_range(0..3)] * (w - 1.0);
                let strokes: Vec<[f64; 4]> = (0..shape_rng.gen_range(2..=3))
                    .map(|_| {
                        [
                            shape_rng.gen_range(0.0..w),
                            shape_rng.gen_range(0.0..h),
                            shape_rng.gen_range(0.0..w),
                            shape_rng.gen_range(0.0..h),
                        ]
                    })
                    .collect();
                let imgs = (0..variants)
                    .map(|v| {
                        let mut rng = seed::rng(seed::derive(seed, &[ci as u64, v as u64 + 1]));
                        let mut jit = |x: f64, hi: f64| {
                            let d = if v == 0 { 0.0 } else { rng.gen_range(-1.5..1.5) };
                            (x + d).clamp(0.0, hi - 1.0)
                        };
                        let mut segs = vec![[jit(stem_x, w), 0.0, jit(stem_x, w), h - 1.0]];
                        for s in &strokes {
                            segs.push([jit(s[0], w), jit(s[1], h), jit(s[2], w), jit(s[3], h)]);
                        }
                        draw_strokes(width, height, &segs, 1.1)
                    })
                    .collect();
                (c, imgs)
            })
            .collect();
        Self::new(entries)
    }

    pub fn classes(&self) -> &[char] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn codepoint(&self, class: usize) -> u32 {
        self.classes[class] as u32
    }

    pub fn variants(&self, c: char) -> Result<&[Image]> {
        self.index
            .get(&c)
            .map(|&i| self.variants[i].as_slice())
            .ok_or(Error::MissingGlyph(c))
    }

    pub fn max_variants(&self) -> usize {
        self.variants.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_height(&self) -> usize {
        self.all().map(Image::height).max().unwrap_or(0)
    }

    pub fn mean_width(&self) -> f64 {
        let (sum, n) = self.all().fold((0usize, 0usize), |(s, n), g| (s + g.width(), n + 1));
        sum as f64 / n as f64
    }

    fn all(&self) -> impl Iterator<Item = &Image> {
        self.variants.iter().flatten()
    }
}

fn draw_strokes(width: usize, height: usize, segs: &[[f64; 4]], radius: f64) -> Image {
    let mut img = Image::filled_gray(width, height, 255);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let hit = segs.iter().any(|s| point_segment_distance(px, py, s) <= radius);
            if hit {
                img.set(x, y, 0, 20);
            }
        }
    }
    img
}

fn point_segment_distance(px: f64, py: f64, s: &[f64; 4]) -> f64 {
    let (dx, dy) = (s[2] - s[0], s[3] - s[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - s[0]) * dx + (py - s[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (s[0] + t * dx, s[1] + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}
