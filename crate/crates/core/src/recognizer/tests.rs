use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ctc::{BeamDecoder, GreedyDecoder};
use crate::metrics::{cer, levenshtein, EditCosts};

fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Image {
    let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
    Image::new(w, h, 1, data).unwrap()
}

fn tiny_model(seed: u64) -> Crnn {
    let net = NetConfig {
        conv_spec: vec![ConvBlock::new(4, 3, 1, [2, 2]), ConvBlock::new(6, 3, 1, [2, 2])],
        hidden_size: 5,
        seed,
        ..NetConfig::default()
    };
    Crnn::new(net, Alphabet::new(vec!['a', 'b', 'c']).unwrap(), 16, ReadingOrder::Auto).unwrap()
}

#[test]
fn alphabet_examples() {
    assert_eq!(build_alphabet(["ab", "ba"]).unwrap().symbols(), &['a', 'b']);
    assert_eq!(build_alphabet(["a"]).unwrap().symbols(), &['a']);
    assert!(build_alphabet(Vec::<&str>::new()).is_err());
    assert!(build_alphabet([""]).is_err());
}

#[test]
fn alphabet_matches_set_union() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<char> = "abcdefghij אבגדה".chars().collect();
    let texts: Vec<String> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..12);
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        })
        .collect();
    let mut union = HashSet::new();
    for t in &texts {
        union.extend(t.chars());
    }
    let mut expected: Vec<char> = union.into_iter().collect();
    expected.sort();
    let a = build_alphabet(texts.iter().map(String::as_str)).unwrap();
    assert_eq!(a.symbols(), expected.as_slice());
    assert_eq!(build_alphabet(texts.iter().rev().map(String::as_str)).unwrap(), a);
}

#[test]
fn batch_padding_and_blackout() {
    let a = gray(50, 32, |_, _| 200);
    let b = gray(80, 32, |_, _| 100);
    let batch = preprocess_batch(&[a, b], 32).unwrap();
    assert_eq!(batch.tensor.shape(), &[2, 1, 32, 80]);
    assert_eq!(batch.valid_widths, vec![50, 80]);
    let s0 = batch.sample(0);
    let black = (0..80).filter(|&x| s0.data()[5 * 80 + x] == 0.0).count();
    assert_eq!(black, 30);
    assert!((s0.data()[49] - 200.0 / 255.0).abs() < 1e-15);

    let plain = preprocess_batch_with(&[gray(50, 32, |_, _| 200), gray(80, 32, |_, _| 1)], 32, false, false).unwrap();
    assert_eq!(plain.sample(0).data()[79], 1.0);
}

#[test]
fn single_image_batch_is_unpadded() {
    let img = gray(37, 32, |x, y| (x * 7 + y * 3) as u8);
    let batch = preprocess_batch(std::slice::from_ref(&img), 32).unwrap();
    assert_eq!(batch.valid_widths, vec![37]);
    let expected: Vec<f64> = img.data().iter().map(|&v| v as f64 / 255.0).collect();
    assert_eq!(batch.sample(0).data(), expected.as_slice());
    assert_eq!(line_tensor(&img, 32, false).unwrap().data(), expected.as_slice());
    assert!(preprocess_batch(&[], 32).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn padding_columns_are_black(widths in prop::collection::vec(1usize..60, 1..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imgs: Vec<Image> = widths
            .iter()
            .map(|&w| {
                let data = (0..w * 16).map(|_| rng.gen()).collect();
                Image::new(w, 16, 1, data).unwrap()
            })
            .collect();
        let batch = preprocess_batch(&imgs, 16).unwrap();
        let wmax = *widths.iter().max().unwrap();
        prop_assert_eq!(batch.width(), wmax);
        for (i, img) in imgs.iter().enumerate() {
            let s = batch.sample(i);
            for y in 0..16 {
                for x in 0..wmax {
                    let v = s.data()[y * wmax + x];
                    if x < widths[i] {
                        prop_assert_eq!(v, img.get(x, y, 0) as f64 / 255.0);
                    } else {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn output_is_log_probabilities_per_frame() {
    let model = tiny_model(1);
    let img = gray(40, 20, |x, y| ((x * 13 + y * 5) % 256) as u8);
    let lp = model.log_probs(&img).unwrap();
    let w = crate::raster::scaled_width(40, 20, 16);
    assert_eq!(lp.frames(), model.frames(w));
    assert_eq!(lp.frames(), w / 4);
    assert_eq!(lp.classes(), 4);
    for t in 0..lp.frames() {
        let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn frame_count_follows_the_conv_stack() {
    let net = NetConfig {
        conv_spec: vec![ConvBlock::new(2, 3, 1, [2, 2]), ConvBlock::new(2, 3, 1, [2, 1])],
        ..NetConfig::default()
    };
    assert_eq!(net.feature_size(32, 100), Some((8, 50)));
    assert_eq!(net.feature_size(3, 100), None);
    let strided = NetConfig {
        conv_spec: vec![ConvBlock::new(2, 3, 2, [1, 1])],
        ..NetConfig::default()
    };
    assert_eq!(strided.feature_size(32, 9), Some((16, 5)));
}

#[test]
fn invalid_configs_are_rejected() {
    let a = Alphabet::new(vec!['a']).unwrap();
    let bad_dropout = NetConfig {
        dropout_p: 1.0,
        ..NetConfig::default()
    };
    assert!(Crnn::new(bad_dropout, a.clone(), 32, ReadingOrder::Ltr).is_err());
    let bad_classes = NetConfig {
        num_classes: 5,
        ..NetConfig::default()
    };
    assert!(Crnn::new(bad_classes, a.clone(), 32, ReadingOrder::Ltr).is_err());
    assert!(Crnn::new(NetConfig::default(), a, 2, ReadingOrder::Ltr).is_err());
    let cfg = TrainConfig {
        train_fraction: 0.9,
        val_fraction: 0.2,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = TrainConfig {
        early_stop_patience: 0,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
    TrainConfig::default().validate().unwrap();
}

#[test]
fn gate_passes_for_several_seeds() {
    for s in 0..20 {
        let r = gradient_gate(s).unwrap();
        assert!(r.max_tensor_rel_error < GRAD_GATE_TOLERANCE, "seed {s}: {r:?}");
        assert!(r.checked > 100);
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let model = tiny_model(7);
    let ckpt = model.to_checkpoint(serde_json::json!([]), serde_json::Value::Null).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Crnn::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let img = gray(30, 16, |x, y| ((x ^ y) * 9) as u8);
    assert_eq!(model.log_probs(&img).unwrap(), back.log_probs(&img).unwrap());
    assert_eq!(
        transcribe(&ckpt, &img, "greedy").unwrap(),
        model.transcribe(&img, &GreedyDecoder).unwrap()
    );
    let mut wrong = ckpt.clone();
    wrong.header.kind = "segmenter".into();
    assert!(Crnn::from_checkpoint(&wrong).is_err());
}

#[test]
fn greedy_and_unit_beam_agree() {
    let model = tiny_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let beam = BeamDecoder::new(1).unwrap();
    for _ in 0..20 {
        let w = rng.gen_range(8..60);
        let data = (0..w * 16).map(|_| rng.gen()).collect();
        let img = Image::new(w, 16, 1, data).unwrap();
        assert_eq!(
            model.transcribe(&img, &GreedyDecoder).unwrap(),
            model.transcribe(&img, &beam).unwrap()
        );
    }
}

#[test]
fn split_sizes_and_determinism() {
    let cfg = TrainConfig::default();
    let s = split_manifest(2000, &cfg).unwrap();
    assert_eq!((s.test.len(), s.train.len(), s.val.len()), (100, 1520, 380));
    assert_eq!(s, split_manifest(2000, &cfg).unwrap());
    let mut all: Vec<usize> = s.test.iter().chain(&s.train).chain(&s.val).copied().collect();
    all.sort();
    assert_eq!(all, (0..2000).collect::<Vec<_>>());
    let other = split_manifest(2000, &TrainConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(s.test, other.test);

    let small = split_manifest(20, &cfg).unwrap();
    assert_eq!((small.test.len(), small.train.len(), small.val.len()), (4, 13, 3));
    assert!(split_manifest(9, &cfg).is_err());
}

fn transcript(text: &str, prediction: &str) -> Transcript {
    Transcript {
        page: "p".into(),
        line: 0,
        text: text.into(),
        prediction: prediction.into(),
        loss: Some(1.0),
    }
}

#[test]
fn report_aggregates() {
    let perfect: Vec<_> = ["ab", "c d", "eee", "f", "gh i"].iter().map(|t| transcript(t, t)).collect();
    let r = report_from(perfect);
    assert_eq!((r.cer, r.wer, r.loss), (0.0, 0.0, 1.0));

    let texts: Vec<String> = (0..10).map(|i| "x".repeat(5 + i % 2 * 10)).collect();
    assert_eq!(texts.iter().map(String::len).sum::<usize>(), 100);
    let r = report_from(texts.iter().map(|t| transcript(t, "")).collect());
    assert_eq!(r.cer, 1.0);
    assert_eq!(r.wer, 1.0);
}

#[test]
fn corpus_cer_is_distance_over_length() {
    let pairs = [("hallo", "hello"), ("", "abcd"), ("abc", "abc"), ("xyz", "x")];
    let r = report_from(pairs.iter().map(|(p, t)| transcript(t, p)).collect());
    let dist: u64 = pairs.iter().map(|(p, t)| levenshtein(p, t, EditCosts::UNIT)).sum();
    let len: usize = pairs.iter().map(|(_, t)| t.chars().count()).sum();
    assert_eq!(r.cer, dist as f64 / len as f64);
    assert_eq!(cer("hallo", "hello").unwrap(), 0.2);
}


#[test]
fn reading_order_resolution() {
    let hebrew = build_alphabet(["אב ג", "a"]).unwrap();
    assert_eq!(ReadingOrder::Auto.resolve(&hebrew), ReadingOrder::Rtl);
    let latin = build_alphabet(["ab c", "א"]).unwrap();
    assert_eq!(ReadingOrder::Auto.resolve(&latin), ReadingOrder::Ltr);
    assert_eq!(ReadingOrder::Ltr.resolve(&hebrew), ReadingOrder::Ltr);
    assert_eq!(ReadingOrder::Auto.resolve(&build_alphabet(["1 2"]).unwrap()), ReadingOrder::Ltr);
}

#[test]
fn rtl_lines_are_mirrored_before_padding() {
    let img = gray(4, 8, |x, _| (x * 50) as u8);
    let wide = gray(6, 8, |_, _| 255);
    let b = preprocess_batch_with(&[img.clone(), wide], 8, true, true).unwrap();
    let row: Vec<f64> = b.sample(0).data()[..6].to_vec();
    let expected: Vec<f64> = [150.0, 100.0, 50.0, 0.0].iter().map(|v| v / 255.0).chain([0.0, 0.0]).collect();
    assert_eq!(row, expected);
    let t = line_tensor(&img, 8, true).unwrap();
    assert_eq!(t.data()[0], 150.0 / 255.0);
}
