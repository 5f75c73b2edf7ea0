use manuscriptor_core::ctc::GreedyDecoder;
use manuscriptor_core::raster::Image;
use manuscriptor_core::recognizer::{
    evaluate, read_transcripts, report_from, train, train_with_hooks, transcribe, write_transcripts, EvalOptions,
    EpochStats, TrainConfig, TrainHooks,
};
use manuscriptor_core::synth::{GlyphSet, LineSample, HEBREW_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_glyph_samples(n: usize, seed: u64) -> (GlyphSet, Vec<LineSample>) {
    let classes: Vec<char> = HEBREW_CLASSES[..4].to_vec();
    let glyphs = GlyphSet::procedural(&classes, 16, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let c = classes[rng.gen_range(0..classes.len())];
            LineSample {
                image: glyphs.variants(c).unwrap()[0].clone(),
                text: c.to_string(),
                source_page: format!("p{}", i / 5),
                line_index: (i % 5) as u32,
            }
        })
        .collect();
    (glyphs, samples)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        target_height: 16,
        hidden_size: 16,
        lr: 1e-2,
        batch_size: 4,
        max_epochs: 40,
        early_stop_patience: 40,
        test_holdout: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn single_glyphs_are_learned() {
    let (_, samples) = single_glyph_samples(20, 1);
    let out = train(&samples, &small_config()).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|s| s.train_loss).collect();
    assert!(losses.last().unwrap() < &(losses[0] * 0.5), "{losses:?}");
    let report = evaluate(&out.model, &samples, &EvalOptions::default()).unwrap();
    assert_eq!(report.cer, 0.0, "{:?}", report.samples);
}

#[test]
fn training_is_reproducible() {
    let (_, samples) = single_glyph_samples(20, 2);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..small_config()
    };
    let a = train(&samples, &cfg).unwrap().checkpoint.to_bytes().unwrap();
    let b = train(&samples, &cfg).unwrap().checkpoint.to_bytes().unwrap();
    assert_eq!(a, b);
    let c = train(&samples, &TrainConfig { seed: 43, ..cfg }).unwrap().checkpoint.to_bytes().unwrap();
    assert_ne!(a, c);
}

struct Scripted(Vec<f64>, usize);

impl TrainHooks for Scripted {
    fn val_loss(&mut self, epoch: usize, _: f64) -> f64 {
        self.0[(epoch - 1).min(self.0.len() - 1)]
    }

    fn epoch_end(&mut self, _: &EpochStats) {
        self.1 += 1;
    }
}

#[test]
fn patience_counts_non_improving_epochs() {
    let (_, samples) = single_glyph_samples(20, 3);
    let cfg = TrainConfig {
        max_epochs: 30,
        early_stop_patience: 3,
        ..small_config()
    };
    let mut hooks = Scripted(vec![5.0, 4.0, 4.5, 3.0, 3.0], 0);
    let out = train_with_hooks(&samples, &cfg, &mut hooks).unwrap();
    assert_eq!(out.best_epoch, 4);
    assert_eq!(out.history.len(), 7);
    assert_eq!(hooks.1, 7);
    assert!(out.stopped_early);

    let mut never = Scripted((0..30).map(|e| 10.0 - e as f64 * 0.1).collect(), 0);
    let out = train_with_hooks(&samples, &TrainConfig { max_epochs: 6, ..cfg }, &mut never).unwrap();
    assert_eq!(out.history.len(), 6);
    assert_eq!(out.best_epoch, 6);
    assert!(!out.stopped_early);
}

#[test]
fn checkpoint_transcribes_like_the_model() {
    let (glyphs, samples) = single_glyph_samples(20, 1);
    let out = train(&samples, &small_config()).unwrap();
    for &c in glyphs.classes() {
        let img = &glyphs.variants(c).unwrap()[0];
        let direct = out.model.transcribe(img, &GreedyDecoder).unwrap();
        assert_eq!(direct, c.to_string());
        assert_eq!(transcribe(&out.checkpoint, img, "greedy").unwrap(), direct);
        assert_eq!(transcribe(&out.checkpoint, img, "beam:4").unwrap(), direct);
    }
    let blank = Image::filled_gray(20, 16, 255);
    let model_text = out.model.transcribe(&blank, &GreedyDecoder).unwrap();
    assert_eq!(transcribe(&out.checkpoint, &blank, "greedy").unwrap(), model_text);
}

#[test]
fn report_is_recomputable_from_transcripts() {
    let (_, samples) = single_glyph_samples(20, 4);
    let out = train(&samples, &TrainConfig { max_epochs: 2, ..small_config() }).unwrap();
    let report = evaluate(&out.model, &samples, &EvalOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_transcripts(&report.samples, &path).unwrap();
    let again = report_from(read_transcripts(&path).unwrap());
    assert_eq!(again.cer, report.cer);
    assert_eq!(again.wer, report.wer);
    assert!((again.loss - report.loss).abs() < 1e-12);
    assert_eq!(again.samples.len(), samples.len());
}
