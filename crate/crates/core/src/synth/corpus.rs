use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::compose_with;
use super::{segmenter_registry, strip_punctuation, CompositionParams, GlyphSet, VariantMode};
use crate::raster::{encode_png, load_png, Image};
use crate::{seed, Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusOptions {
    pub params: CompositionParams,
    /// Registry spec of the line segmenter.
    pub segmenter: String,
    /// Stop after this many records.
    pub max_records: Option<usize>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            params: CompositionParams::default(),
            segmenter: "projection".into(),
            max_records: Some(2000),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub text: String,
    pub page: String,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    EmptyFile,
    SegmentMismatch { composed: usize, segmented: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skipped {
    pub source: String,
    pub reason: SkipReason,
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub skipped: Vec<Skipped>,
}

/// A decoded line image with its transcription.
#[derive(Clone, Debug)]
pub struct LineSample {
    pub image: Image,
    pub text: String,
    pub source_page: String,
    pub line_index: u32,
}

/// Greedy word wrap to at most `max` characters per line; longer words are cut.
pub fn wrap_words(text: &str, max: usize) -> Vec<String> {
    let max = max.max(1);
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_len = 0;
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        for piece in chars.chunks(max) {
            let n = piece.len();
            if cur_len > 0 && cur_len + 1 + n > max {
                out.push(std::mem::take(&mut cur));
                cur_len = 0;
            }
            if cur_len > 0 {
                cur.push(' ');
                cur_len += 1;
            }
            cur.extend(piece);
            cur_len += n;
        }
    }
    if cur_len > 0 {
        out.push(cur);
    }
    out
}

struct PageJob {
    id: String,
    lines: Vec<String>,
    seed: u64,
    variant: Option<usize>,
}

enum PageOutcome {
    Lines(Vec<(ManifestRecord, Vec<u8>)>),
    Rejected(Skipped),
}

/// Compose, segment and write a line corpus under `out_dir`.
///
/// Output depends only on the inputs and `master_seed`, never on thread scheduling.
pub fn build_corpus(
    text_files: &[PathBuf],
    glyphs: &GlyphSet,
    opts: &CorpusOptions,
    out_dir: &Path,
    master_seed: u64,
) -> Result<Manifest> {
    let params = &opts.params;
    params.validate(glyphs)?;
    let segmenter = segmenter_registry().build(&opts.segmenter)?;
    let mut manifest = Manifest::default();
    let mut jobs = Vec::new();
    for (fi, path) in text_files.iter().enumerate() {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(raw)
            .map_err(|_| Error::InvalidArgument(format!("{} is not UTF-8", path.display())))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let tag = format!("{fi:03}_{stem}");
        let lines: Vec<String> = text
            .lines()
            .map(strip_punctuation)
            .flat_map(|l| wrap_words(&l, params.max_line_chars))
            .collect();
        if lines.is_empty() {
            log::info!("skipping {}: no text after filtering", path.display());
            manifest.skipped.push(Skipped {
                source: tag,
                reason: SkipReason::EmptyFile,
            });
            continue;
        }
        for line in &lines {
            for c in line.chars().filter(|&c| c != ' ') {
                if !glyphs.contains(c) {
                    return Err(Error::MissingGlyph(c));
                }
            }
        }
        for (pi, chunk) in lines.chunks(params.lines_per_page).enumerate() {
            let page_seed = seed::derive(master_seed, &[fi as u64, pi as u64]);
            let variants: Vec<Option<usize>> = match params.variant_mode {
                VariantMode::Uniform => vec![None],
                VariantMode::PerVariant => (0..glyphs.max_variants()).map(Some).collect(),
            };
            for v in variants {
                let id = match v {
                    None => format!("{tag}-p{pi:04}"),
                    Some(v) => format!("{tag}-p{pi:04}-v{v}"),
                };
                jobs.push(PageJob {
                    id,
                    lines: chunk.to_vec(),
                    seed: page_seed,
                    variant: v,
                });
            }
        }
    }

    let outcomes: Vec<Result<PageOutcome>> = jobs
        .par_iter()
        .map(|job| {
            let page = compose_with(&job.lines, glyphs, params, job.seed, job.variant)?;
            let segments = segmenter.segment(&page.image)?;
            if segments.len() != job.lines.len() {
                return Ok(PageOutcome::Rejected(Skipped {
                    source: job.id.clone(),
                    reason: SkipReason::SegmentMismatch {
                        composed: job.lines.len(),
                        segmented: segments.len(),
                    },
                }));
            }
            segments
                .into_iter()
                .zip(&job.lines)
                .enumerate()
                .map(|(li, (seg, text))| {
                    let record = ManifestRecord {
                        image: format!("lines/{}_l{li:03}.png", job.id),
                        text: text.clone(),
                        page: job.id.clone(),
                        line: li as u32,
                    };
                    Ok((record, encode_png(&seg.image)?))
                })
                .collect::<Result<Vec<_>>>()
                .map(PageOutcome::Lines)
        })
        .collect();

    let mut files = Vec::new();
    for outcome in outcomes {
        match outcome? {
            PageOutcome::Rejected(s) => {
                log::warn!("rejected page {}: {:?}", s.source, s.reason);
                manifest.skipped.push(s);
            }
            PageOutcome::Lines(lines) => files.extend(lines),
        }
    }
    if let Some(cap) = opts.max_records {
        files.truncate(cap);
    }

    let line_dir = out_dir.join("lines");
    fs::create_dir_all(&line_dir).map_err(|e| Error::io(&line_dir, e))?;
    files.par_iter().try_for_each(|(rec, bytes)| {
        let path = out_dir.join(&rec.image);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    })?;
    let mut body = Vec::new();
    for (rec, _) in &files {
        serde_json::to_writer(&mut body, rec)?;
        body.push(b'\n');
    }
    let mpath = out_dir.join(MANIFEST_NAME);
    fs::File::create(&mpath)
        .and_then(|mut f| f.write_all(&body))
        .map_err(|e| Error::io(&mpath, e))?;
    manifest.records = files.into_iter().map(|(r, _)| r).collect();
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

impl LineSample {
    /// Load every record of a manifest, resolving images against its directory.
    pub fn load_manifest(path: &Path) -> Result<Vec<LineSample>> {
        let base = path.parent().unwrap_or(Path::new("."));
        read_manifest(path)?
            .into_iter()
            .map(|r| {
                Ok(LineSample {
                    image: load_png(base.join(&r.image))?.to_gray(),
                    text: r.text,
                    source_page: r.page,
                    line_index: r.line,
                })
            })
            .collect()
    }
}
