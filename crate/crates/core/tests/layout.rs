use manuscriptor_core::layout::{
    evaluate_segmenter, self_train, train_segmenter, BenchmarkConfig, LabeledPage, LayoutBenchmark, PageOrigin,
    Segmenter, SegmenterConfig, SegmenterTrainConfig, SelfTrainConfig, UnlabeledPage,
};
use manuscriptor_core::net::Parameterized;

fn small_bench(seed: u64) -> LayoutBenchmark {
    let cfg = BenchmarkConfig {
        width: 32,
        height: 32,
        labeled: 4,
        pool: 6,
        val: 4,
        test: 4,
        ..BenchmarkConfig::default()
    };
    LayoutBenchmark::generate(&cfg, seed).unwrap()
}

fn quick_train() -> SegmenterTrainConfig {
    SegmenterTrainConfig {
        lr: 2e-3,
        max_epochs: 4,
        background_weight: 0.2,
        ..SegmenterTrainConfig::default()
    }
}

fn weights(model: &Segmenter) -> Vec<f64> {
    model.params().iter().flat_map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn training_is_deterministic() {
    let bench = small_bench(1);
    let run = || {
        let mut m = Segmenter::new(SegmenterConfig::default()).unwrap();
        let out = train_segmenter(&mut m, &bench.labeled, &bench.val, &quick_train()).unwrap();
        let bytes = m.to_checkpoint(serde_json::to_value(&out).unwrap(), serde_json::Value::Null).unwrap();
        bytes.to_bytes().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn best_epoch_weights_are_restored() {
    let bench = small_bench(2);
    let mut m = Segmenter::new(SegmenterConfig::default()).unwrap();
    let cfg = SegmenterTrainConfig {
        patience: 2,
        max_epochs: 40,
        ..quick_train()
    };
    let out = train_segmenter(&mut m, &bench.labeled, &bench.val, &cfg).unwrap();
    assert_eq!(out.val_miou.len(), out.epochs_run);
    assert!(out.best_epoch >= 1 && out.best_epoch <= out.epochs_run);
    if out.epochs_run < cfg.max_epochs {
        assert_eq!(out.epochs_run - out.best_epoch, cfg.patience);
    }
    let best = out.val_miou[out.best_epoch - 1];
    assert_eq!(best, out.best_val_miou);
    assert!(out.val_miou.iter().all(|&v| v <= best));
    assert_eq!(evaluate_segmenter(&m, &bench.val).unwrap(), best);
}

fn unlabeled(pages: &[LabeledPage]) -> Vec<UnlabeledPage> {
    pages
        .iter()
        .map(|p| UnlabeledPage {
            stem: p.stem.clone(),
            image: p.image.clone(),
        })
        .collect()
}

#[test]
fn unreachable_threshold_selects_nothing() {
    let bench = small_bench(3);
    let cfg = SelfTrainConfig {
        confidence_threshold: 1.01,
        train: quick_train(),
        ..SelfTrainConfig::default()
    };
    let out = self_train(bench.labeled.clone(), bench.pool.clone(), &bench.val, &cfg).unwrap();
    assert!(out.report.rounds.is_empty());
    assert_eq!(weights(&out.model), weights(&out.baseline));
    assert_eq!(out.report.final_val_miou, out.report.baseline_val_miou);
    assert!(out.report.train_set.iter().all(|(_, o)| *o == PageOrigin::GroundTruth));
}

#[test]
fn empty_pool_runs_no_rounds() {
    let bench = small_bench(4);
    let cfg = SelfTrainConfig {
        train: quick_train(),
        ..SelfTrainConfig::default()
    };
    let out = self_train(bench.labeled.clone(), Vec::new(), &bench.val, &cfg).unwrap();
    assert!(out.report.rounds.is_empty());
    assert_eq!(out.report.train_set.len(), bench.labeled.len());
}

#[test]
fn pseudo_labels_come_from_the_pool() {
    let bench = small_bench(5);
    let cfg = SelfTrainConfig {
        confidence_threshold: 0.05,
        max_rounds: 2,
        train: quick_train(),
        ..SelfTrainConfig::default()
    };
    let pool = bench.pool.clone();
    let out = self_train(bench.labeled.clone(), pool.clone(), &bench.val, &cfg).unwrap();
    assert!(!out.report.rounds.is_empty());
    let pool_stems: Vec<&str> = pool.iter().map(|p| p.stem.as_str()).collect();
    let mut seen = std::collections::HashSet::new();
    for (round, r) in out.report.rounds.iter().enumerate() {
        for s in &r.selected {
            assert!(pool_stems.contains(&s.as_str()), "{s} not in pool");
            assert!(seen.insert(s.clone()), "{s} selected twice (round {})", round + 1);
        }
    }
    for (stem, origin) in &out.report.train_set {
        match origin {
            PageOrigin::GroundTruth => assert!(bench.labeled.iter().any(|p| &p.stem == stem)),
            PageOrigin::Pseudo { round } => {
                assert!(out.report.rounds[round - 1].selected.contains(stem));
            }
        }
    }
    assert!(out.report.final_val_miou >= out.report.baseline_val_miou);
}

#[test]
fn overlapping_stems_are_rejected() {
    let bench = small_bench(6);
    let pool = unlabeled(&bench.labeled[..1]);
    assert!(self_train(bench.labeled.clone(), pool, &bench.val, &SelfTrainConfig::default()).is_err());
    assert!(self_train(Vec::new(), Vec::new(), &bench.val, &SelfTrainConfig::default()).is_err());
}
