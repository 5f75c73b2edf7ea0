use super::*;
use crate::net::grad_check_fn;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> LayoutMask {
    LayoutMask::new(w, h, (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect()).unwrap()
}

#[test]
fn legacy_label_maps_to_background() {
    let m = LayoutMask::new(3, 1, vec![11, 2, 0]).unwrap();
    assert_eq!(m.labels(), &[0, 2, 0]);
    assert!(LayoutMask::new(1, 1, vec![9]).is_err());
    assert!(LayoutMask::new(2, 2, vec![0; 3]).is_err());
}

#[test]
fn mask_png_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let m = mask_from(7, 4, |x, y| ((x + y) % 9) as u8);
    let p = tmp.path().join("m.png");
    m.save(&p).unwrap();
    assert_eq!(LayoutMask::load(&p).unwrap(), m);
}

#[test]
fn nearest_resize_only_copies_labels() {
    let m = mask_from(4, 4, |x, _| if x < 2 { 1 } else { 5 });
    let up = m.resize_nearest(8, 6).unwrap();
    assert!(up.labels().iter().all(|&l| l == 1 || l == 5));
    assert_eq!(up.get(3, 0), 1);
    assert_eq!(up.get(4, 0), 5);
    assert_eq!(up.resize_nearest(4, 4).unwrap(), m);
}

#[test]
fn weights_of_a_single_class() {
    let m = LayoutMask::filled(5, 4, LayoutClass::Decision);
    let w = class_weights(&[m], 1e-9);
    assert!((w[3] - 20.0 / (8.0 * (20.0 + 1e-9))).abs() < 1e-15);
    assert!((w[3] - 0.125).abs() < 1e-9);
}

#[test]
fn balanced_classes_weigh_one() {
    let m = mask_from(8, 3, |x, _| x as u8 + 1);
    let w = class_weights(&[m], 0.0);
    assert_eq!(w, [1.0; 8]);
}

#[test]
fn spot_weights_ninety_ten() {
    let m = mask_from(100, 1, |x, _| if x < 90 { 1 } else { 2 });
    let w = class_weights(&[m], 1e-9);
    assert!((w[0] - 100.0 / (8.0 * (90.0 + 1e-9))).abs() < 1e-12);
    assert!((w[0] - 0.138_888_888_9).abs() < 1e-9);
    assert!((w[1] - 1.25).abs() < 1e-9);
}

#[test]
fn one_hot_logits_have_no_loss() {
    let m = mask_from(3, 2, |x, y| ((x + y) % 3) as u8 + 1);
    let logits = Tensor::from_fn(&[9, 2, 3], |i| {
        let (k, p) = (i / 6, i % 6);
        if m.labels()[p] as usize == k {
            30.0
        } else {
            0.0
        }
    });
    let (loss, _) = weighted_ce(&logits, &m, &[1.0; 8]).unwrap();
    assert!(loss <= 1e-6);
}

#[test]
fn uniform_logits_give_weighted_log_nine() {
    let m = mask_from(4, 4, |x, _| if x == 0 { 0 } else { 6 });
    let mut w = [1.0; 8];
    w[5] = 2.5;
    let (loss, _) = weighted_ce(&Tensor::zeros(&[9, 4, 4]), &m, &w).unwrap();
    assert!((loss - 2.5 * 9f64.ln()).abs() < 1e-12);
}

#[test]
fn background_page_is_an_empty_page() {
    let m = LayoutMask::filled(2, 2, LayoutClass::Background);
    assert!(matches!(weighted_ce(&Tensor::zeros(&[9, 2, 2]), &m, &[1.0; 8]), Err(Error::EmptyPage)));
}

#[test]
fn weighted_ce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = mask_from(3, 3, |x, y| if x == y { 0 } else { ((x * 3 + y) % 8) as u8 + 1 });
    let w: [f64; 8] = std::array::from_fn(|_| rng.gen_range(0.2..3.0));
    let x: Vec<f64> = (0..81).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let report = grad_check_fn(&x, 1e-6, |v| {
        let (l, g) = weighted_ce(&Tensor::new(&[9, 3, 3], v.to_vec())?, &m, &w)?;
        Ok((l, g.into_data()))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn loss_mass_bookkeeping() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = mask_from(5, 4, |x, y| ((x * y) % 4) as u8);
    let w: [f64; 8] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
    let logits = Tensor::from_fn(&[9, 4, 5], |_| rng.gen_range(-3.0..3.0));
    let (mean, _) = weighted_ce(&logits, &m, &w).unwrap();
    let mut total = 0.0;
    let mut n = 0;
    for p in 0..20 {
        let l = m.labels()[p] as usize;
        if l == 0 {
            continue;
        }
        let col: Vec<f64> = (0..9).map(|k| logits.data()[k * 20 + p]).collect();
        let lse = col.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += w[l - 1] * (lse - col[l]);
        n += 1;
    }
    assert!((mean * n as f64 - total).abs() < 1e-10);
}

#[test]
fn iou_examples() {
    let gt = mask_from(10, 15, |_, y| if (5..15).contains(&y) { 2 } else { 0 });
    let pred = mask_from(10, 15, |_, y| if y < 10 { 2 } else { 0 });
    assert!((mean_iou(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(mean_iou(&gt, &gt).unwrap(), 1.0);
    let a = LayoutMask::filled(3, 3, LayoutClass::Heading);
    let b = LayoutMask::filled(3, 3, LayoutClass::Date);
    assert_eq!(mean_iou(&a, &b).unwrap(), 0.0);
    assert!(matches!(
        mean_iou(&a, &LayoutMask::filled(3, 4, LayoutClass::Date)),
        Err(Error::DimensionMismatch(_))
    ));
    let bg = LayoutMask::filled(2, 2, LayoutClass::Background);
    assert_eq!(mean_iou(&bg, &bg).unwrap(), 1.0);
}

/// Pixel-set oracle: collect coordinates per class and intersect sets.
fn iou_oracle(pred: &LayoutMask, gt: &LayoutMask) -> f64 {
    use std::collections::HashSet;
    let mut ious = Vec::new();
    for c in 1..=8u8 {
        let set = |m: &LayoutMask| -> HashSet<usize> {
            m.labels().iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect()
        };
        let (p, g) = (set(pred), set(gt));
        let union = p.union(&g).count();
        if union > 0 {
            ious.push(p.intersection(&g).count() as f64 / union as f64);
        }
    }
    if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u8) -> LayoutMask {
    LayoutMask::new(w, h, (0..w * h).map(|_| rng.gen_range(0..classes)).collect()).unwrap()
}

#[test]
fn iou_matches_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let k = rng.gen_range(1..=9);
        let (p, g) = (random_mask(&mut rng, w, h, k), random_mask(&mut rng, w, h, k));
        assert!((mean_iou(&p, &g).unwrap() - iou_oracle(&p, &g)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = (random_mask(&mut rng, 6, 5, 9), random_mask(&mut rng, 6, 5, 9));
        let (a, b) = (mean_iou(&p, &g).unwrap(), mean_iou(&g, &p).unwrap());
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn confidence_averages() {
    let m = mask_from(4, 1, |x, _| if x < 2 { 0 } else { 3 });
    assert_eq!(avg_confidence(&[0.8; 4], &m, ConfidenceScope::Foreground), 0.8);
    assert_eq!(avg_confidence(&[0.1, 0.2, 0.5, 0.7], &m, ConfidenceScope::Foreground), 0.6);
    assert_eq!(avg_confidence(&[0.1, 0.2, 0.5, 0.7], &m, ConfidenceScope::AllPixels), 0.375);
    let bg = LayoutMask::filled(4, 1, LayoutClass::Background);
    assert_eq!(avg_confidence(&[0.9; 4], &bg, ConfidenceScope::Foreground), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conf: Vec<f64> = (0..64).map(|_| rng.gen_range(1.0 / 9.0..1.0)).collect();
    let mask = random_mask(&mut rng, 8, 8, 4);
    let (mut s, mut n) = (0.0, 0);
    for i in 0..64 {
        if mask.labels()[i] != 0 {
            s += conf[i];
            n += 1;
        }
    }
    assert!((avg_confidence(&conf, &mask, ConfidenceScope::Foreground) - s / n as f64).abs() < 1e-12);
}

#[test]
fn untrained_zero_weights_predict_uniformly() {
    let mut model = Segmenter::new(SegmenterConfig::default()).unwrap();
    for p in model.params_mut() {
        p.value.fill(0.0);
    }
    let img = Image::filled_rgb(9, 6, [100, 150, 200]);
    let (mask, conf) = model.predict(&img).unwrap();
    assert_eq!((mask.width(), mask.height()), (9, 6));
    assert!(conf.iter().all(|&c| (c - 1.0 / 9.0).abs() < 1e-12));
}

#[test]
fn confidence_is_a_probability_bound() {
    let model = Segmenter::new(SegmenterConfig::default()).unwrap();
    let (img, _) = benchmark_page(&BenchmarkConfig::default(), 3).unwrap();
    let (_, conf) = model.predict(&img).unwrap();
    assert!(conf.iter().all(|&c| (1.0 / 9.0 - 1e-12..=1.0).contains(&c)));
}

#[test]
fn segmenter_gradient_matches_finite_differences() {
    let model = Segmenter::new(SegmenterConfig {
        channels: [2, 3],
        ..SegmenterConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = Image::new(6, 5, 3, (0..90).map(|_| rng.gen()).collect()).unwrap();
    let mask = mask_from(6, 5, |x, y| ((x + 2 * y) % 4) as u8);
    let w = [0.7, 1.3, 0.9, 1.1, 1.0, 1.0, 1.0, 1.0];
    let mut model = model;
    let report = crate::net::grad_check(&mut model, 1e-6, |m| {
        let (logits, state) = m.forward(&img, crate::net::Mode::Eval)?;
        let (l, g) = weighted_ce(&logits, &mask, &w)?;
        let mut grads = m.grad_buffers();
        m.backward(&state, &g, &mut grads)?;
        Ok((l, grads))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn checkpoint_round_trip() {
    let model = Segmenter::new(SegmenterConfig::default()).unwrap();
    let ckpt = model.to_checkpoint(serde_json::json!([]), serde_json::Value::Null).unwrap();
    let back = Segmenter::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap()).unwrap();
    let img = benchmark_page(&BenchmarkConfig::default(), 0).unwrap().0;
    assert_eq!(model.logits(&img).unwrap(), back.logits(&img).unwrap());
}

#[test]
fn split_fractions() {
    let (a, b) = split_indices(10, 0.8, 42);
    assert_eq!((a.len(), b.len()), (8, 2));
    let (c, d) = split_indices(10, 0.8, 42);
    assert_eq!((a.clone(), b.clone()), (c, d));
    let mut all: Vec<usize> = a.into_iter().chain(b).collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(split_indices(2, 0.99, 1).1.len(), 1);
}
