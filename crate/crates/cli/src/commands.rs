use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use manuscriptor_core::layout::{
    evaluate_segmenter, self_train, split_indices, train_segmenter, LabeledPage, LayoutBenchmark, Segmenter,
};
use manuscriptor_core::metrics::{mean_ratio, ratio_registry, ErrorTotals};
use manuscriptor_core::net::{layer_suite, Checkpoint};
use manuscriptor_core::pagesplit::{split_collection, SplitInputs};
use manuscriptor_core::recognizer::{
    evaluate, gradient_gate, train, write_transcripts, Crnn, EvalOptions, EvalReport, Split,
};
use manuscriptor_core::synth::{build_corpus, CorpusOptions, GlyphSet, LineSample, MANIFEST_NAME};
use manuscriptor_core::{ctc, seed};
use serde_json::json;

use crate::config::RunConfig;
use crate::{data, UsageError};

/// Error bound for the finite-difference gate.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compose pages from text files and write a segmented line corpus.
    Synth(SynthArgs),
    /// Split double-page scans at the gutter.
    Split(SplitArgs),
    /// Train the line recognizer on a corpus manifest.
    TrainOcr(TrainOcrArgs),
    /// Transcribe line images with a trained recognizer.
    Transcribe(TranscribeArgs),
    /// Score a recognizer on a manifest; prints a JSON report.
    EvalOcr(EvalOcrArgs),
    /// Train the layout segmenter on labeled pages.
    TrainLayout(TrainLayoutArgs),
    /// Baseline plus pseudo-label rounds over an unlabeled pool.
    SelfTrain(SelfTrainArgs),
    /// Mean IoU of a segmenter on labeled pages; prints JSON.
    EvalLayout(EvalLayoutArgs),
    /// Finite-difference gradient verification of every layer and the CTC composite.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic low-label layout benchmark.
    Bench(BenchArgs),
    /// CER, WER and similarity ratio of line-aligned prediction and reference files.
    EvalText(EvalTextArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// UTF-8 text files, one source page stream each.
    #[arg(long = "text")]
    text: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Glyph directory (one folder per codepoint); procedural glyphs otherwise.
    #[arg(long)]
    glyphs: Option<PathBuf>,
    #[arg(long)]
    max_records: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    color: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    binary: Option<PathBuf>,
    #[arg(long)]
    bbox: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    border_margin: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainOcrArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TranscribeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `greedy`, `beam` or `beam:<width>`.
    #[arg(long)]
    decoder: Option<String>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    #[default]
    All,
    /// The held-out test indices stored in the checkpoint.
    Test,
}

#[derive(Args, Debug)]
pub struct EvalOcrArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    decoder: Option<String>,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    subset: Subset,
    /// Write per-line transcripts as JSON lines.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Lines per padded batch; 1 scores each line on its own.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Also score with and without blacking out the padding.
    #[arg(long)]
    ab_blackout: bool,
}

#[derive(Args, Debug)]
pub struct TrainLayoutArgs {
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SelfTrainArgs {
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint of the final model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the supervised baseline here.
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalLayoutArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory with `images/` and `masks/`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances per layer type.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalTextArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// `max` or `indel`.
    #[arg(long)]
    ratio_mode: Option<String>,
}

fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        *slot = flag.clone();
    }
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| UsageError(format!("missing {what} (flag or config)")).into())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    create_parent(path)?;
    ckpt.save(path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::TrainOcr(_) => "train-ocr",
            Command::Transcribe(_) => "transcribe",
            Command::EvalOcr(_) => "eval-ocr",
            Command::TrainLayout(_) => "train-layout",
            Command::SelfTrain(_) => "self-train",
            Command::EvalLayout(_) => "eval-layout",
            Command::Gradcheck(_) => "gradcheck",
            Command::Bench(_) => "bench",
            Command::EvalText(_) => "eval-text",
        }
    }

    /// Fold command-line flags into the effective configuration.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        match self {
            Command::Synth(a) => {
                if !a.text.is_empty() {
                    cfg.synth.text_files = a.text.clone();
                }
                set_opt(&mut cfg.synth.out_dir, &a.out);
                set_opt(&mut cfg.synth.glyph_dir, &a.glyphs);
                set_opt(&mut cfg.synth.max_records, &a.max_records);
            }
            Command::Split(a) => {
                let s = &mut cfg.split;
                set_opt(&mut s.color, &a.color);
                set_opt(&mut s.mask, &a.mask);
                set_opt(&mut s.binary, &a.binary);
                set_opt(&mut s.bbox, &a.bbox);
                set_opt(&mut s.out_dir, &a.out);
                set(&mut s.border_margin, &a.border_margin);
            }
            Command::TrainOcr(a) => {
                set_opt(&mut cfg.ocr.manifest, &a.manifest);
                set_opt(&mut cfg.ocr.checkpoint, &a.out);
                let t = &mut cfg.ocr.train;
                set(&mut t.max_epochs, &a.epochs);
                set(&mut t.early_stop_patience, &a.patience);
                set(&mut t.lr, &a.lr);
                set(&mut t.batch_size, &a.batch_size);
            }
            Command::Transcribe(a) => {
                set_opt(&mut cfg.ocr.checkpoint, &a.checkpoint);
                set(&mut cfg.ocr.decoder, &a.decoder);
            }
            Command::EvalOcr(a) => {
                set_opt(&mut cfg.ocr.checkpoint, &a.checkpoint);
                set_opt(&mut cfg.ocr.manifest, &a.manifest);
                set(&mut cfg.ocr.decoder, &a.decoder);
                set(&mut cfg.ocr.eval_batch_size, &a.batch_size);
            }
            Command::TrainLayout(a) => {
                let l = &mut cfg.layout;
                set_opt(&mut l.labeled, &a.labeled);
                set_opt(&mut l.val, &a.val);
                set_opt(&mut l.checkpoint, &a.out);
                set(&mut l.self_train.train.max_epochs, &a.epochs);
                set(&mut l.self_train.train.lr, &a.lr);
            }
            Command::SelfTrain(a) => {
                let l = &mut cfg.layout;
                set_opt(&mut l.labeled, &a.labeled);
                set_opt(&mut l.pool, &a.pool);
                set_opt(&mut l.val, &a.val);
                set_opt(&mut l.checkpoint, &a.out);
                set(&mut l.self_train.confidence_threshold, &a.threshold);
                set(&mut l.self_train.max_rounds, &a.rounds);
            }
            Command::EvalLayout(a) => set_opt(&mut cfg.layout.checkpoint, &a.checkpoint),
            Command::Bench(a) => set_opt(&mut cfg.layout.bench_dir, &a.out),
            Command::EvalText(a) => set(&mut cfg.metrics.ratio_mode, &a.ratio_mode),
            Command::Gradcheck(_) => {}
        }
        Ok(())
    }

    pub fn execute(&self, cfg: &RunConfig) -> Result<()> {
        let seed = cfg.seed.unwrap_or(42);
        match self {
            Command::Synth(_) => synth(cfg, seed),
            Command::Split(_) => split(cfg),
            Command::TrainOcr(_) => train_ocr(cfg),
            Command::Transcribe(a) => transcribe(cfg, &a.images),
            Command::EvalOcr(a) => eval_ocr(cfg, a),
            Command::TrainLayout(_) => train_layout(cfg, seed),
            Command::SelfTrain(a) => run_self_train(cfg, seed, a.baseline_out.as_deref()),
            Command::EvalLayout(a) => eval_layout(cfg, &a.data),
            Command::Gradcheck(a) => gradcheck(a.seeds, seed),
            Command::Bench(_) => bench(cfg, seed),
            Command::EvalText(a) => eval_text(cfg, &a.pred, &a.gt),
        }
    }
}

fn synth(cfg: &RunConfig, seed: u64) -> Result<()> {
    let s = &cfg.synth;
    if s.text_files.is_empty() {
        bail!(UsageError("synth needs at least one text file".into()));
    }
    let out = required(&s.out_dir, "synth output directory")?;
    let glyphs = match &s.glyph_dir {
        Some(dir) => GlyphSet::load_dir(dir)?,
        None => {
            let classes: Vec<char> = s.procedural.classes.chars().collect();
            GlyphSet::procedural(&classes, s.procedural.height, s.procedural.variants, seed)?
        }
    };
    let opts = CorpusOptions {
        params: s.params.clone(),
        segmenter: s.segmenter.clone(),
        max_records: s.max_records,
    };
    let manifest = build_corpus(&s.text_files, &glyphs, &opts, out, seed)?;
    print_json(&json!({
        "manifest": out.join(MANIFEST_NAME),
        "records": manifest.records.len(),
        "skipped": manifest.skipped.len(),
    }))
}

fn split(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.split;
    let inputs = SplitInputs {
        color: required(&s.color, "split color directory")?.to_path_buf(),
        mask: s.mask.clone(),
        binary: s.binary.clone(),
        bbox: s.bbox.clone(),
    };
    let out = required(&s.out_dir, "split output directory")?;
    let records = split_collection(&inputs, out, s.border_margin)?;
    let split = records.iter().filter(|r| r.split_x.is_some()).count();
    print_json(&json!({ "pages": records.len(), "split": split }))
}

fn train_ocr(cfg: &RunConfig) -> Result<()> {
    let manifest = required(&cfg.ocr.manifest, "ocr manifest")?;
    let out = required(&cfg.ocr.checkpoint, "ocr checkpoint path")?;
    let samples = LineSample::load_manifest(manifest)?;
    let outcome = train(&samples, &cfg.ocr.train)?;
    save_checkpoint(&outcome.checkpoint, out)?;
    print_json(&json!({
        "best_epoch": outcome.best_epoch,
        "stopped_early": outcome.stopped_early,
        "grad_check_error": outcome.grad_check_error,
        "history": outcome.history,
    }))
}

fn load_crnn(cfg: &RunConfig) -> Result<(Checkpoint, Crnn)> {
    let path = required(&cfg.ocr.checkpoint, "ocr checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let model = Crnn::from_checkpoint(&ckpt)?;
    Ok((ckpt, model))
}

fn transcribe(cfg: &RunConfig, images: &[PathBuf]) -> Result<()> {
    let (_, model) = load_crnn(cfg)?;
    let decoder = ctc::decoder_registry().build(&cfg.ocr.decoder)?;
    for (path, img) in images.iter().zip(data::load_images(images)?) {
        let text = model.transcribe(&img, decoder.as_ref())?;
        println!("{}", json!({ "image": path, "text": text }));
    }
    Ok(())
}

fn summary(r: &EvalReport) -> serde_json::Value {
    json!({ "loss": r.loss, "cer": r.cer, "wer": r.wer, "samples": r.samples.len() })
}

fn eval_ocr(cfg: &RunConfig, args: &EvalOcrArgs) -> Result<()> {
    let (ckpt, model) = load_crnn(cfg)?;
    let manifest = required(&cfg.ocr.manifest, "ocr manifest")?;
    let mut samples = LineSample::load_manifest(manifest)?;
    if args.subset == Subset::Test {
        let split: Split = serde_json::from_value(ckpt.header.extra["split"].clone())
            .map_err(|e| UsageError(format!("checkpoint has no usable split: {e}")))?;
        if split.test.iter().any(|&i| i >= samples.len()) {
            bail!(UsageError("checkpoint split does not match this manifest".into()));
        }
        samples = split.test.iter().map(|&i| samples[i].clone()).collect();
    }
    let opts = EvalOptions {
        decoder: cfg.ocr.decoder.clone(),
        batch_size: cfg.ocr.eval_batch_size,
        blackout: cfg.ocr.train.blackout,
        normalize_by_target_len: cfg.ocr.train.normalize_by_target_len,
    };
    let report = evaluate(&model, &samples, &opts)?;
    if let Some(path) = &args.transcripts {
        create_parent(path)?;
        write_transcripts(&report.samples, path)?;
    }
    let mut out = summary(&report);
    if args.ab_blackout {
        let flipped = evaluate(&model, &samples, &EvalOptions { blackout: !opts.blackout, ..opts.clone() })?;
        let (on, off) = if opts.blackout { (&report, &flipped) } else { (&flipped, &report) };
        out["blackout_ab"] = json!({ "on": summary(on), "off": summary(off) });
    }
    print_json(&out)
}

/// Validation pages from the configured directory, or carved from the labeled set.
fn labeled_and_val(cfg: &RunConfig, seed: u64) -> Result<(Vec<LabeledPage>, Vec<LabeledPage>)> {
    let l = &cfg.layout;
    let labeled = data::load_labeled(required(&l.labeled, "layout labeled directory")?)?;
    if let Some(dir) = &l.val {
        return Ok((labeled, data::load_labeled(dir)?));
    }
    if labeled.len() < 2 {
        bail!(UsageError("need at least two labeled pages to carve a validation split".into()));
    }
    let (val_idx, train_idx) = split_indices(labeled.len(), l.val_fraction, seed::derive(seed, &[0x7a1]));
    let pick = |idx: &[usize]| idx.iter().map(|&i| labeled[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train_idx), pick(&val_idx)))
}

fn train_layout(cfg: &RunConfig, seed: u64) -> Result<()> {
    let out = required(&cfg.layout.checkpoint, "layout checkpoint path")?;
    let (train, val) = labeled_and_val(cfg, seed)?;
    let st = &cfg.layout.self_train;
    let mut model = Segmenter::new(st.model.clone())?;
    let outcome = train_segmenter(&mut model, &train, &val, &st.train)?;
    let ckpt = model.to_checkpoint(serde_json::to_value(&outcome)?, json!({ "train_config": st.train }))?;
    save_checkpoint(&ckpt, out)?;
    print_json(&serde_json::to_value(&outcome)?)
}

fn run_self_train(cfg: &RunConfig, seed: u64, baseline_out: Option<&Path>) -> Result<()> {
    let out = required(&cfg.layout.checkpoint, "layout checkpoint path")?;
    let pool = data::load_unlabeled(required(&cfg.layout.pool, "layout pool directory")?)?;
    let (labeled, val) = labeled_and_val(cfg, seed)?;
    let st = &cfg.layout.self_train;
    let result = self_train(labeled, pool, &val, st)?;
    let report = serde_json::to_value(&result.report)?;
    let extra = json!({ "self_train_config": st });
    save_checkpoint(&result.model.to_checkpoint(report.clone(), extra.clone())?, out)?;
    if let Some(path) = baseline_out {
        save_checkpoint(&result.baseline.to_checkpoint(json!(null), extra)?, path)?;
    }
    print_json(&json!({
        "baseline_val_miou": result.report.baseline_val_miou,
        "rounds": result.report.rounds,
        "final_val_miou": result.report.final_val_miou,
    }))
}

fn eval_layout(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(required(&cfg.layout.checkpoint, "layout checkpoint")?)?;
    let model = Segmenter::from_checkpoint(&ckpt)?;
    let pages = data::load_labeled(dir)?;
    let miou = evaluate_segmenter(&model, &pages)?;
    print_json(&json!({ "miou": miou, "pages": pages.len() }))
}

fn gradcheck(seeds: u64, seed: u64) -> Result<()> {
    if seeds == 0 {
        bail!(UsageError("--seeds must be at least 1".into()));
    }
    let layers = layer_suite(seeds)?;
    let gate = gradient_gate(seed)?;
    let worst_layer = layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let max_rel_error = worst_layer.max(gate.max_tensor_rel_error);
    let pass = max_rel_error < GRADCHECK_TOLERANCE;
    print_json(&json!({
        "layers": layers.iter().map(|l| json!({ "layer": l.layer, "max_rel_error": l.max_rel_error })).collect::<Vec<_>>(),
        "composite": {
            "max_rel_error": gate.max_tensor_rel_error,
            "max_entry_rel_error": gate.max_rel_error,
            "checked": gate.checked,
        },
        "max_rel_error": max_rel_error,
        "tolerance": GRADCHECK_TOLERANCE,
        "pass": pass,
    }))?;
    if !pass {
        bail!("gradient check failed: {max_rel_error:.3e} >= {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}

fn bench(cfg: &RunConfig, seed: u64) -> Result<()> {
    let out = required(&cfg.layout.bench_dir, "benchmark output directory")?;
    let b = LayoutBenchmark::generate(&cfg.layout.benchmark, seed)?;
    data::save_labeled(&out.join("labeled"), &b.labeled)?;
    data::save_unlabeled(&out.join("pool"), &b.pool)?;
    data::save_labeled(&out.join("val"), &b.val)?;
    data::save_labeled(&out.join("test"), &b.test)?;
    print_json(&json!({
        "labeled": b.labeled.len(),
        "pool": b.pool.len(),
        "val": b.val.len(),
        "test": b.test.len(),
    }))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn eval_text(cfg: &RunConfig, pred: &Path, gt: &Path) -> Result<()> {
    let ratio = ratio_registry().build(&cfg.metrics.ratio_mode)?;
    let (pred, gt) = (read_lines(pred)?, read_lines(gt)?);
    if pred.len() != gt.len() {
        bail!(UsageError(format!(
            "prediction has {} lines but reference has {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut totals = ErrorTotals::default();
    for (p, g) in pred.iter().zip(&gt) {
        totals.add(p, g);
    }
    let mean = mean_ratio(ratio.as_ref(), pred.iter().map(String::as_str).zip(gt.iter().map(String::as_str)));
    print_json(&json!({
        "cer": totals.cer(),
        "wer": totals.wer(),
        "ratio": mean,
        "ratio_mode": ratio.name(),
        "lines": gt.len(),
    }))
}
