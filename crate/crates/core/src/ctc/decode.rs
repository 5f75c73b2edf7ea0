use std::collections::BTreeMap;

use super::{collapse, log_add, log_likelihood, Alphabet, LogitsSequence, BLANK};
use crate::registry::Registry;
use crate::{Error, Result};

/// A decoded label sequence and its log-probability under the decoder's model
/// (best single path for greedy, summed prefix mass for beam search).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub log_prob: f64,
}

pub trait Decoder: Send + Sync {
    fn name(&self) -> String;
    fn decode(&self, lp: &LogitsSequence) -> Hypothesis;

    fn decode_text(&self, lp: &LogitsSequence, alphabet: &Alphabet) -> String {
        alphabet.decode(&self.decode(lp).labels)
    }
}

/// Best-path decoding: per-frame argmax, then collapse.
pub struct GreedyDecoder;

impl Decoder for GreedyDecoder {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn decode(&self, lp: &LogitsSequence) -> Hypothesis {
        let mut path = Vec::with_capacity(lp.frames());
        let mut log_prob = 0.0;
        for t in 0..lp.frames() {
            // First maximum wins ties.
            let (k, v) = lp
                .row(t)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
            path.push(k);
            log_prob += v;
        }
        Hypothesis {
            labels: collapse(&path),
            log_prob,
        }
    }
}

/// Prefix beam search. Each prefix tracks the mass of paths ending in a blank
/// and in its last label separately, so repeated labels are merged correctly.
///
/// Pruning makes a single search non-monotone in the width, so the decoder
/// runs every width up to `width`, rescores each surviving prefix with its
/// exact likelihood and reports the best. The reported probability therefore
/// never decreases as the width grows.
pub struct BeamDecoder {
    pub width: usize,
}

#[derive(Clone, Copy)]
struct PrefixMass {
    blank: f64,
    label: f64,
}

impl PrefixMass {
    const ZERO: PrefixMass = PrefixMass {
        blank: f64::NEG_INFINITY,
        label: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.label)
    }
}

impl BeamDecoder {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("beam width must be >= 1".into()));
        }
        Ok(Self { width })
    }

    /// Surviving prefixes of a single search at `width`, best first.
    fn search(lp: &LogitsSequence, width: usize) -> Vec<Vec<usize>> {
        let mut beams: Vec<(Vec<usize>, PrefixMass)> = vec![(
            Vec::new(),
            PrefixMass {
                blank: 0.0,
                label: f64::NEG_INFINITY,
            },
        )];
        for t in 0..lp.frames() {
            let row = lp.row(t);
            let mut next: BTreeMap<Vec<usize>, PrefixMass> = BTreeMap::new();
            for (prefix, mass) in &beams {
                let stay = next.entry(prefix.clone()).or_insert(PrefixMass::ZERO);
                stay.blank = log_add(stay.blank, mass.total() + row[BLANK]);
                let last = prefix.last().copied();
                if let Some(l) = last {
                    // Repeating the last label without a blank keeps the prefix.
                    stay.label = log_add(stay.label, mass.label + row[l]);
                }
                for (k, &p) in row.iter().enumerate().skip(1) {
                    let mut extended = prefix.clone();
                    extended.push(k);
                    let entry = next.entry(extended).or_insert(PrefixMass::ZERO);
                    let from = if Some(k) == last { mass.blank } else { mass.total() };
                    entry.label = log_add(entry.label, from + p);
                }
            }
            let mut ranked: Vec<(Vec<usize>, PrefixMass)> = next.into_iter().collect();
            // Stable sort over lexicographically ordered prefixes: ties resolve deterministically.
            ranked.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()));
            ranked.truncate(width);
            beams = ranked;
        }
        beams.into_iter().map(|(prefix, _)| prefix).collect()
    }
}

impl Decoder for BeamDecoder {
    fn name(&self) -> String {
        format!("beam:{}", self.width)
    }

    fn decode(&self, lp: &LogitsSequence) -> Hypothesis {
        let mut best = Hypothesis {
            labels: Vec::new(),
            log_prob: log_likelihood(lp, &[]),
        };
        let mut scored = std::collections::HashSet::new();
        for width in 1..=self.width {
            for labels in Self::search(lp, width) {
                if !scored.insert(labels.clone()) {
                    continue;
                }
                let log_prob = log_likelihood(lp, &labels);
                if log_prob > best.log_prob {
                    best = Hypothesis { labels, log_prob };
                }
            }
        }
        best
    }
}

pub fn greedy_decode(lp: &LogitsSequence, alphabet: &Alphabet) -> String {
    GreedyDecoder.decode_text(lp, alphabet)
}

pub fn beam_decode(lp: &LogitsSequence, alphabet: &Alphabet, beam_width: usize) -> Result<String> {
    Ok(BeamDecoder::new(beam_width)?.decode_text(lp, alphabet))
}

/// Decoders by name: `greedy`, `beam` or `beam:<width>` (default width 10).
pub fn decoder_registry() -> Registry<dyn Decoder> {
    let mut reg: Registry<dyn Decoder> = Registry::new("decoder");
    reg.register("greedy", |_| Ok(Box::new(GreedyDecoder)));
    reg.register("beam", |arg| {
        let width = match arg {
            None => 10,
            Some(a) => a
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("beam width {a:?} is not an integer")))?,
        };
        Ok(Box::new(BeamDecoder::new(width)?))
    });
    reg
}
