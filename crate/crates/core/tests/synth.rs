use std::collections::HashSet;
use std::fs;

use manuscriptor_core::raster::NoiseParams;
use manuscriptor_core::synth::{
    build_corpus, compose_page, segment_lines, CompositionParams, CorpusOptions, GlyphSet, HEBREW_CLASSES,
    MANIFEST_NAME,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_line(rng: &mut ChaCha8Rng, max: usize) -> String {
    let words = rng.gen_range(1..=3);
    let mut s = String::new();
    for w in 0..words {
        if w > 0 {
            s.push(' ');
        }
        for _ in 0..rng.gen_range(1..=3) {
            s.push(HEBREW_CLASSES[rng.gen_range(0..27)]);
        }
    }
    s.chars().take(max).collect::<String>().trim().to_string()
}

#[test]
fn zero_noise_pages_round_trip() {
    let glyphs = GlyphSet::procedural(&HEBREW_CLASSES, 24, 3, 1).unwrap();
    let params = CompositionParams {
        wave_amplitude: 0.0,
        noise: NoiseParams::flat(255),
        ..CompositionParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for page in 0..200 {
        let n = rng.gen_range(1..=5);
        let lines: Vec<String> = (0..n).map(|_| random_line(&mut rng, 12)).collect();
        let composed = compose_page(&lines, &glyphs, &params, page).unwrap();
        let segs = segment_lines(&composed.image, 0.0);
        assert_eq!(segs.len(), lines.len(), "page {page}");
        for (seg, line) in segs.iter().zip(&composed.lines) {
            assert!(seg.y_top <= line.y_top && line.y_bottom <= seg.y_bottom);
            let xs: Vec<i64> = line.glyphs.iter().map(|g| g.x).collect();
            assert!(xs.windows(2).all(|w| w[1] < w[0]), "RTL order on page {page}");
        }
    }
}

#[test]
fn wavy_noisy_segments_contain_composer_ranges() {
    let glyphs = GlyphSet::procedural(&HEBREW_CLASSES, 24, 2, 2).unwrap();
    let params = CompositionParams {
        wave_amplitude: 4.0,
        wave_frequency: 1.0 / 200.0,
        line_height: 44,
        ..CompositionParams::default()
    };
    let lines: Vec<String> = ["אבג דה", "וזחטי", "כל מנ ס"].iter().map(|s| s.to_string()).collect();
    let page = compose_page(&lines, &glyphs, &params, 3).unwrap();
    let segs = segment_lines(&page.image, 0.0);
    assert_eq!(segs.len(), 3);
    for (s, l) in segs.iter().zip(&page.lines) {
        assert!(s.y_top <= l.y_top && l.y_bottom <= s.y_bottom);
    }
}

fn corpus_files(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    (0..2)
        .map(|i| {
            let body: Vec<String> = (0..5).map(|_| random_line(&mut rng, 12)).collect();
            let p = dir.join(format!("text{i}.txt"));
            fs::write(&p, body.join("\n")).unwrap();
            p
        })
        .collect()
}

#[test]
fn corpus_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let files = corpus_files(tmp.path());
    let glyphs = GlyphSet::procedural(&HEBREW_CLASSES, 24, 2, 4).unwrap();
    let opts = CorpusOptions {
        params: CompositionParams {
            noise: NoiseParams::flat(255),
            lines_per_page: 5,
            ..CompositionParams::default()
        },
        ..CorpusOptions::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ma = build_corpus(&files, &glyphs, &opts, &a, 77).unwrap();
    let mb = build_corpus(&files, &glyphs, &opts, &b, 77).unwrap();
    assert_eq!(ma.records.len(), 10);
    assert_eq!(ma.records, mb.records);
    assert_eq!(fs::read(a.join(MANIFEST_NAME)).unwrap(), fs::read(b.join(MANIFEST_NAME)).unwrap());
    for r in &ma.records {
        assert_eq!(fs::read(a.join(&r.image)).unwrap(), fs::read(b.join(&r.image)).unwrap());
    }
    let c = tmp.path().join("c");
    build_corpus(&files, &glyphs, &opts, &c, 78).unwrap();
    let same = ma
        .records
        .iter()
        .all(|r| fs::read(a.join(&r.image)).unwrap() == fs::read(c.join(&r.image)).unwrap());
    assert!(!same, "a different master seed should change some line");
}

#[test]
fn corpus_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let files = corpus_files(tmp.path());
    let glyphs = GlyphSet::procedural(&HEBREW_CLASSES, 24, 2, 4).unwrap();
    let opts = CorpusOptions::default();
    let run = |threads: usize, out: std::path::PathBuf| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_corpus(&files, &glyphs, &opts, &out, 3).unwrap());
        fs::read(out.join(MANIFEST_NAME)).unwrap()
    };
    assert_eq!(run(1, tmp.path().join("one")), run(3, tmp.path().join("three")));
}

#[test]
fn every_variant_gets_used() {
    let glyphs = GlyphSet::procedural(&HEBREW_CLASSES, 24, 3, 6).unwrap();
    let params = CompositionParams {
        max_line_chars: 30,
        ..CompositionParams::default()
    };
    let mut used = HashSet::new();
    let line: String = HEBREW_CLASSES.iter().collect();
    for page in 0..20 {
        let p = compose_page(&[line.clone()], &glyphs, &params, page).unwrap();
        used.extend(p.lines[0].glyphs.iter().map(|g| (g.ch, g.variant)));
    }
    assert_eq!(used.len(), 27 * 3);
}
