//! On-disk layout datasets: `<dir>/images/<stem>.png`, plus `<dir>/masks/<stem>.png`
//! for labeled sets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use manuscriptor_core::layout::{LabeledPage, LayoutMask, PageOrigin, UnlabeledPage};
use manuscriptor_core::raster::{load_png, save_png, Image};

use crate::UsageError;

fn stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        bail!(UsageError(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem() {
                out.push((stem.to_string_lossy().into_owned(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_labeled(dir: &Path) -> Result<Vec<LabeledPage>> {
    stems(&dir.join("images"))?
        .into_iter()
        .map(|(stem, path)| {
            let mask_path = dir.join("masks").join(format!("{stem}.png"));
            Ok(LabeledPage {
                image: load_png(&path)?,
                mask: LayoutMask::load(&mask_path)?,
                stem,
                origin: PageOrigin::GroundTruth,
            })
        })
        .collect()
}

pub fn load_unlabeled(dir: &Path) -> Result<Vec<UnlabeledPage>> {
    stems(&dir.join("images"))?
        .into_iter()
        .map(|(stem, path)| Ok(UnlabeledPage { image: load_png(&path)?, stem }))
        .collect()
}

fn ensure(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn save_labeled(dir: &Path, pages: &[LabeledPage]) -> Result<()> {
    ensure(&dir.join("images"))?;
    ensure(&dir.join("masks"))?;
    for p in pages {
        save_png(&p.image, dir.join("images").join(format!("{}.png", p.stem)))?;
        p.mask.save(dir.join("masks").join(format!("{}.png", p.stem)))?;
    }
    Ok(())
}

pub fn save_unlabeled(dir: &Path, pages: &[UnlabeledPage]) -> Result<()> {
    ensure(&dir.join("images"))?;
    for p in pages {
        save_png(&p.image, dir.join("images").join(format!("{}.png", p.stem)))?;
    }
    Ok(())
}

pub fn load_images(paths: &[PathBuf]) -> Result<Vec<Image>> {
    paths.iter().map(|p| Ok(load_png(p)?)).collect()
}
