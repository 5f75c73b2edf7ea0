//! Double-page scan splitting: gutter detection by a leftward scan for a dark
//! red sample, plus the matching split of masks and bounding boxes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::layout::{LayoutClass, LayoutMask};
use crate::raster::{load_png, save_png, Image};
use crate::{Error, Result};

pub const DEFAULT_BORDER_MARGIN: usize = 16;
/// Red values below this count as dark.
pub const DARK_RED: u8 = 200;
pub const INDEX_NAME: &str = "split_index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub label: LayoutClass,
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBoxFile {
    pub regions: Vec<BBox>,
}

impl BBoxFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: BBoxFile = serde_json::from_str(&text)?;
        for b in &file.regions {
            if b.x_min > b.x_max || b.y_min > b.y_max {
                return Err(Error::InvalidArgument(format!("{}: inverted box {b:?}", path.display())));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn suffix(self) -> &'static str {
        match self {
            Side::Left => "_l",
            Side::Right => "_r",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub source: String,
    pub split_x: Option<usize>,
    /// `(suffix, width)`; a single page keeps an empty suffix.
    pub outputs: Vec<(String, usize)>,
}

/// Scan row `h - h/3` leftward from `w/2` for the first red sample below 200.
/// A hit within `border_margin` of the left edge is the outer border: single page.
pub fn find_gutter(img: &Image, border_margin: usize) -> Option<usize> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h == 0 {
        return None;
    }
    let y = h - h / 3;
    let y = y.min(h - 1);
    let x = (0..=w / 2).rev().find(|&x| img.get(x, y, 0) < DARK_RED)?;
    (x >= border_margin && x > 0).then_some(x)
}

/// Columns `[0, split_x)` and `[split_x, width)`.
pub fn split_image(img: &Image, split_x: usize) -> Result<(Image, Image)> {
    check_split(split_x, img.width())?;
    Ok((img.crop_columns(0, split_x)?, img.crop_columns(split_x, img.width())?))
}

pub fn split_mask(mask: &LayoutMask, split_x: usize) -> Result<(LayoutMask, LayoutMask)> {
    check_split(split_x, mask.width())?;
    Ok((mask.crop_columns(0, split_x)?, mask.crop_columns(split_x, mask.width())?))
}

fn check_split(split_x: usize, width: usize) -> Result<()> {
    if split_x == 0 || split_x >= width {
        return Err(Error::InvalidArgument(format!(
            "split_x {split_x} outside (0, {width})"
        )));
    }
    Ok(())
}

/// Assign a box to the page(s) it falls on, clipping boxes that straddle the split.
pub fn reassign_bbox(b: &BBox, split_x: i64) -> Vec<(Side, BBox)> {
    if b.x_max < split_x {
        return vec![(Side::Left, *b)];
    }
    if b.x_min >= split_x {
        let moved = BBox {
            x_min: b.x_min - split_x,
            x_max: b.x_max - split_x,
            ..*b
        };
        return vec![(Side::Right, moved)];
    }
    let mut out = vec![(Side::Left, BBox { x_max: split_x, ..*b })];
    if b.x_max > split_x {
        out.push((
            Side::Right,
            BBox {
                x_min: 0,
                x_max: b.x_max - split_x,
                ..*b
            },
        ));
    }
    out
}

/// Inputs of [`split_collection`]. Only `color` is required.
#[derive(Clone, Debug, Default)]
pub struct SplitInputs {
    pub color: PathBuf,
    pub mask: Option<PathBuf>,
    pub binary: Option<PathBuf>,
    pub bbox: Option<PathBuf>,
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    Ok(stems)
}

fn existing(dir: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
    dir.as_ref().map(|d| d.join(file)).filter(|p| p.is_file())
}

fn copy(src: &Path, dst: &Path) -> Result<()> {
    fs::copy(src, dst).map_err(|e| Error::io(src, e))?;
    Ok(())
}

/// Split every page under `inputs.color`, writing `color/`, `mask/`, `binary/`
/// and `bbox/` under `out_dir` plus a stem → split_x index.
pub fn split_collection(inputs: &SplitInputs, out_dir: &Path, border_margin: usize) -> Result<Vec<SplitRecord>> {
    let stems = png_stems(&inputs.color)?;
    let sub = |name: &str| -> Result<PathBuf> {
        let d = out_dir.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    };
    let color_out = sub("color")?;
    let mask_out = if inputs.mask.is_some() { Some(sub("mask")?) } else { None };
    let binary_out = if inputs.binary.is_some() { Some(sub("binary")?) } else { None };
    let bbox_out = if inputs.bbox.is_some() { Some(sub("bbox")?) } else { None };

    let records: Vec<SplitRecord> = stems
        .par_iter()
        .map(|stem| {
            let png = format!("{stem}.png");
            let color_path = inputs.color.join(&png);
            let color = load_png(&color_path)?;
            let mask_path = existing(&inputs.mask, &png);
            let mask = mask_path.as_deref().map(LayoutMask::load).transpose()?;
            if let Some(m) = &mask {
                if (m.width(), m.height()) != (color.width(), color.height()) {
                    return Err(Error::DimensionMismatch(format!(
                        "{stem}: color {}x{} vs mask {}x{}",
                        color.width(),
                        color.height(),
                        m.width(),
                        m.height()
                    )));
                }
            }
            let binary_path = existing(&inputs.binary, &png);
            let bbox_path = existing(&inputs.bbox, &format!("{stem}.json"));

            let Some(split_x) = find_gutter(&color, border_margin) else {
                copy(&color_path, &color_out.join(&png))?;
                if let (Some(src), Some(dir)) = (&mask_path, &mask_out) {
                    copy(src, &dir.join(&png))?;
                }
                if let (Some(src), Some(dir)) = (&binary_path, &binary_out) {
                    copy(src, &dir.join(&png))?;
                }
                if let (Some(src), Some(dir)) = (&bbox_path, &bbox_out) {
                    copy(src, &dir.join(format!("{stem}.json")))?;
                }
                return Ok(SplitRecord {
                    source: stem.clone(),
                    split_x: None,
                    outputs: vec![(String::new(), color.width())],
                });
            };

            let name = |side: Side, ext: &str| format!("{stem}{}.{ext}", side.suffix());
            let (l, r) = split_image(&color, split_x)?;
            save_png(&l, color_out.join(name(Side::Left, "png")))?;
            save_png(&r, color_out.join(name(Side::Right, "png")))?;
            if let (Some(m), Some(dir)) = (&mask, &mask_out) {
                let (ml, mr) = split_mask(m, split_x)?;
                ml.save(dir.join(name(Side::Left, "png")))?;
                mr.save(dir.join(name(Side::Right, "png")))?;
            }
            if let (Some(src), Some(dir)) = (&binary_path, &binary_out) {
                let bin = load_png(src)?;
                if (bin.width(), bin.height()) != (color.width(), color.height()) {
                    return Err(Error::DimensionMismatch(format!("{stem}: binary image size differs from color")));
                }
                let (bl, br) = split_image(&bin, split_x)?;
                save_png(&bl, dir.join(name(Side::Left, "png")))?;
                save_png(&br, dir.join(name(Side::Right, "png")))?;
            }
            if let (Some(src), Some(dir)) = (&bbox_path, &bbox_out) {
                let file = BBoxFile::load(src)?;
                let (mut left, mut right) = (BBoxFile::default(), BBoxFile::default());
                for b in &file.regions {
                    for (side, piece) in reassign_bbox(b, split_x as i64) {
                        match side {
                            Side::Left => left.regions.push(piece),
                            Side::Right => right.regions.push(piece),
                        }
                    }
                }
                left.save(&dir.join(name(Side::Left, "json")))?;
                right.save(&dir.join(name(Side::Right, "json")))?;
            }
            Ok(SplitRecord {
                source: stem.clone(),
                split_x: Some(split_x),
                outputs: vec![("_l".into(), l.width()), ("_r".into(), r.width())],
            })
        })
        .collect::<Result<_>>()?;

    let index: BTreeMap<&str, Option<usize>> = records.iter().map(|r| (r.source.as_str(), r.split_x)).collect();
    let path = out_dir.join(INDEX_NAME);
    fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// A white RGB double page with a dark gutter band `[g - half, g + half)` and an
/// optional dark outer border of `border` columns on both sides.
pub fn synthetic_double_page(width: usize, height: usize, g: usize, half: usize, border: usize) -> Image {
    let mut img = Image::filled_rgb(width, height, [245, 240, 230]);
    for y in 0..height {
        for x in 0..width {
            let in_gutter = half > 0 && x + half >= g && x < g + half;
            let in_border = x < border || x + border >= width;
            if in_gutter || in_border {
                for c in 0..3 {
                    img.set(x, y, c, 40);
                }
            }
        }
    }
    img
}
