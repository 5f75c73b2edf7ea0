use std::path::{Path, PathBuf};

use anyhow::Result;
use manuscriptor_core::layout::{BenchmarkConfig, SelfTrainConfig};
use manuscriptor_core::recognizer::TrainConfig;
use manuscriptor_core::synth::{CompositionParams, HEBREW_CLASSES};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SEED_ENV: &str = "MANUSCRIPTOR_SEED";

/// One JSON document configuring every command. Relative paths are resolved
/// against the directory holding the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides the per-section seeds.
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub ocr: OcrSection,
    pub layout: LayoutSection,
    pub metrics: MetricsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProceduralGlyphs {
    pub classes: String,
    pub height: usize,
    pub variants: usize,
}

impl Default for ProceduralGlyphs {
    fn default() -> Self {
        Self {
            classes: HEBREW_CLASSES.iter().collect(),
            height: 24,
            variants: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub text_files: Vec<PathBuf>,
    /// Directory of per-codepoint glyph folders; procedural glyphs when absent.
    pub glyph_dir: Option<PathBuf>,
    pub procedural: ProceduralGlyphs,
    pub params: CompositionParams,
    pub segmenter: String,
    pub max_records: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let opts = manuscriptor_core::synth::CorpusOptions::default();
        Self {
            text_files: Vec::new(),
            glyph_dir: None,
            procedural: ProceduralGlyphs::default(),
            params: opts.params,
            segmenter: opts.segmenter,
            max_records: opts.max_records,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub color: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub binary: Option<PathBuf>,
    pub bbox: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub border_margin: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            color: None,
            mask: None,
            binary: None,
            bbox: None,
            out_dir: None,
            border_margin: manuscriptor_core::pagesplit::DEFAULT_BORDER_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcrSection {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    /// Decoder registry name: `greedy`, `beam` or `beam:<width>`.
    pub decoder: String,
    pub eval_batch_size: usize,
}

impl Default for OcrSection {
    fn default() -> Self {
        Self {
            manifest: None,
            checkpoint: None,
            train: TrainConfig::default(),
            decoder: "greedy".into(),
            eval_batch_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    /// Directory with `images/` and `masks/`.
    pub labeled: Option<PathBuf>,
    /// Directory with `images/`.
    pub pool: Option<PathBuf>,
    /// Directory with `images/` and `masks/`; carved from `labeled` when absent.
    pub val: Option<PathBuf>,
    pub val_fraction: f64,
    pub checkpoint: Option<PathBuf>,
    pub self_train: SelfTrainConfig,
    pub benchmark: BenchmarkConfig,
    pub bench_dir: Option<PathBuf>,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            labeled: None,
            pool: None,
            val: None,
            val_fraction: 0.2,
            checkpoint: None,
            self_train: SelfTrainConfig::default(),
            benchmark: BenchmarkConfig::default(),
            bench_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// `max` (1 - d / max length) or `indel`.
    pub ratio_mode: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            ratio_mode: "max".into(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.synth.text_files.iter_mut().for_each(|p| resolve(base, p));
        resolve_opt(base, &mut self.synth.glyph_dir);
        resolve_opt(base, &mut self.synth.out_dir);
        for p in [
            &mut self.split.color,
            &mut self.split.mask,
            &mut self.split.binary,
            &mut self.split.bbox,
            &mut self.split.out_dir,
            &mut self.ocr.manifest,
            &mut self.ocr.checkpoint,
            &mut self.layout.labeled,
            &mut self.layout.pool,
            &mut self.layout.val,
            &mut self.layout.checkpoint,
            &mut self.layout.bench_dir,
        ] {
            resolve_opt(base, p);
        }
    }

    /// Seed precedence: flag, then environment, then config, then 42.
    pub fn apply_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let seed = flag.or(env).or(self.seed).unwrap_or(42);
        self.seed = Some(seed);
        self.ocr.train.seed = seed;
        self.layout.self_train.train.seed = seed;
        self.layout.self_train.model.seed = seed;
        Ok(seed)
    }
}
