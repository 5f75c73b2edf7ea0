//! Edit-distance metrics: Levenshtein distance, similarity ratios, CER and WER.

use serde::{Deserialize, Serialize};

use crate::registry::Registry;
use crate::{Error, Result};

/// Per-operation costs for [`levenshtein`]. Operations transform `a` into `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCosts {
    pub insert: u64,
    pub delete: u64,
    pub substitute: u64,
}

impl Default for EditCosts {
    fn default() -> Self {
        Self::UNIT
    }
}

impl EditCosts {
    pub const UNIT: EditCosts = EditCosts {
        insert: 1,
        delete: 1,
        substitute: 1,
    };
    /// Insertions and deletions only; a substitution costs one of each.
    pub const INDEL: EditCosts = EditCosts {
        insert: 1,
        delete: 1,
        substitute: 2,
    };
}

/// Minimal edit cost between two sequences (two-row DP).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T], costs: EditCosts) -> u64 {
    let mut prev: Vec<u64> = (0..=b.len() as u64).map(|j| j * costs.insert).collect();
    let mut cur = vec![0u64; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = (i as u64 + 1) * costs.delete;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + if x == y { 0 } else { costs.substitute };
            cur[j + 1] = sub.min(prev[j + 1] + costs.delete).min(cur[j] + costs.insert);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str, costs: EditCosts) -> u64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b, costs)
}

/// A normalized similarity in [0, 1]; 1 means identical.
pub trait SimilarityRatio: Send + Sync {
    fn name(&self) -> &'static str;
    fn ratio(&self, a: &str, b: &str) -> f64;
}

/// `1 - d / max(|a|, |b|)` with unit costs.
pub struct MaxLengthRatio;

impl SimilarityRatio for MaxLengthRatio {
    fn name(&self) -> &'static str {
        "max"
    }

    fn ratio(&self, a: &str, b: &str) -> f64 {
        let longest = a.chars().count().max(b.chars().count());
        if longest == 0 {
            return 1.0;
        }
        1.0 - levenshtein(a, b, EditCosts::UNIT) as f64 / longest as f64
    }
}

/// `(|a| + |b| - d) / (|a| + |b|)` where substitutions cost 2.
pub struct IndelRatio;

impl SimilarityRatio for IndelRatio {
    fn name(&self) -> &'static str {
        "indel"
    }

    fn ratio(&self, a: &str, b: &str) -> f64 {
        let total = a.chars().count() + b.chars().count();
        if total == 0 {
            return 1.0;
        }
        (total as f64 - levenshtein(a, b, EditCosts::INDEL) as f64) / total as f64
    }
}

pub fn ratio_registry() -> Registry<dyn SimilarityRatio> {
    let mut reg: Registry<dyn SimilarityRatio> = Registry::new("ratio mode");
    reg.register("max", |_| Ok(Box::new(MaxLengthRatio)));
    reg.register("indel", |_| Ok(Box::new(IndelRatio)));
    reg
}

/// Default Levenshtein ratio (`max` mode).
pub fn lev_ratio(a: &str, b: &str) -> f64 {
    MaxLengthRatio.ratio(a, b)
}

/// Arithmetic mean of per-sample ratios over `(prediction, reference)` pairs.
pub fn mean_ratio<'a>(
    ratio: &dyn SimilarityRatio,
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> f64 {
    let (sum, n) = pairs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (p, g)| (s + ratio.ratio(p, g), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Character error rate. May exceed 1 for long predictions.
pub fn cer(pred: &str, gt: &str) -> Result<f64> {
    let n = gt.chars().count();
    if n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok(levenshtein(pred, gt, EditCosts::UNIT) as f64 / n as f64)
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Word error rate over whitespace-delimited tokens.
pub fn wer(pred: &str, gt: &str) -> Result<f64> {
    let g = words(gt);
    if g.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    Ok(edit_distance(&words(pred), &g, EditCosts::UNIT) as f64 / g.len() as f64)
}

/// Running totals for corpus-level CER/WER (total distance over total length).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorTotals {
    pub char_edits: u64,
    pub chars: u64,
    pub word_edits: u64,
    pub words: u64,
}

impl ErrorTotals {
    pub fn add(&mut self, pred: &str, gt: &str) {
        self.char_edits += levenshtein(pred, gt, EditCosts::UNIT);
        self.chars += gt.chars().count() as u64;
        let g = words(gt);
        self.word_edits += edit_distance(&words(pred), &g, EditCosts::UNIT);
        self.words += g.len() as u64;
    }

    pub fn cer(&self) -> f64 {
        if self.chars == 0 {
            0.0
        } else {
            self.char_edits as f64 / self.chars as f64
        }
    }

    pub fn wer(&self) -> f64 {
        if self.words == 0 {
            0.0
        } else {
            self.word_edits as f64 / self.words as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive recursion without memoization.
    fn naive(a: &[char], b: &[char]) -> u64 {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len() as u64,
            (_, None) => a.len() as u64,
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + u64::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    #[test]
    fn basic_distances() {
        assert_eq!(levenshtein("", "abc", EditCosts::UNIT), 3);
        assert_eq!(levenshtein("x", "x", EditCosts::UNIT), 0);
        assert_eq!(levenshtein("kitten", "sitting", EditCosts::UNIT), 3);
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(naive(&k, &s), 3);
        assert_eq!(levenshtein("שלום", "שלם", EditCosts::UNIT), 1);
    }

    #[test]
    fn weighted_costs_are_directional() {
        let costs = EditCosts {
            insert: 5,
            delete: 1,
            substitute: 10,
        };
        assert_eq!(levenshtein("", "ab", costs), 10);
        assert_eq!(levenshtein("ab", "", costs), 2);
    }

    #[test]
    fn ratios() {
        assert_eq!(lev_ratio("abc", "abc"), 1.0);
        assert_eq!(lev_ratio("", ""), 1.0);
        assert_eq!(lev_ratio("", "abc"), 0.0);
        assert!((lev_ratio("abc", "abd") - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert!((IndelRatio.ratio("abc", "abd") - 4.0 / 6.0).abs() < 1e-15);
        let reg = ratio_registry();
        assert_eq!(reg.build("indel").unwrap().name(), "indel");
        assert!(reg.build("jaro").is_err());
    }

    #[test]
    fn error_rates() {
        assert_eq!(cer("hallo", "hello").unwrap(), 0.2);
        assert_eq!(cer("", "abcd").unwrap(), 1.0);
        assert!(cer("a", "").is_err());
        assert_eq!(wer("the cat sat", "the cat").unwrap(), 0.5);
        assert_eq!(wer("the cat", "the cat").unwrap(), 0.0);
        assert_eq!(wer("", "a b").unwrap(), 1.0);
        assert!(wer("a", "   ").is_err());
        assert_eq!(wer("  the   cat ", "the cat").unwrap(), 0.0);
    }

    #[test]
    fn corpus_totals_aggregate_distances() {
        let pairs = [("abc", "abd"), ("", "xy"), ("hello world", "hello")];
        let mut totals = ErrorTotals::default();
        let (mut d, mut n) = (0, 0);
        for (p, g) in pairs {
            totals.add(p, g);
            d += levenshtein(p, g, EditCosts::UNIT);
            n += g.chars().count() as u64;
        }
        assert_eq!(totals.cer(), d as f64 / n as f64);
        assert_eq!(totals.wer(), (1 + 1 + 1) as f64 / 3.0);
    }

    fn short() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c'), Just('ש')], 0..=8)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn dp_equals_recursion(a in short(), b in short()) {
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            prop_assert_eq!(levenshtein(&a, &b, EditCosts::UNIT), naive(&ac, &bc));
        }

        #[test]
        fn metric_axioms(a in short(), b in short(), c in short()) {
            let d = |x: &str, y: &str| levenshtein(x, y, EditCosts::UNIT);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            let r = lev_ratio(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r == 1.0, a == b);
            let longest = a.chars().count().max(b.chars().count()) as u64;
            prop_assert_eq!(r == 0.0, longest > 0 && d(&a, &b) == longest);
        }
    }
}
