//! Synthetic manuscript corpus: glyph sets, right-to-left page composition,
//! line segmentation and manifest generation.

mod compose;
mod corpus;
mod glyphs;
mod segment;

pub use compose::{compose_page, CompositionParams, ComposedLine, ComposedPage, Placement, VariantMode};
pub use corpus::{
    build_corpus, read_manifest, wrap_words, CorpusOptions, Manifest, ManifestRecord, LineSample,
    SkipReason, Skipped, MANIFEST_NAME,
};
pub use glyphs::{GlyphSet, HEBREW_CLASSES};
pub use segment::{segment_lines, segmenter_registry, LineSegmenter, ProjectionSegmenter, Segment};

/// Punctuation that separates words like a space does: list and joiner marks,
/// including the Hebrew maqaf. All other non-letters are deleted in place.
pub const SEPARATOR_PUNCTUATION: [char; 9] = [',', ';', ':', '/', '-', '\u{2013}', '\u{2014}', '\u{05BE}', '|'];

/// Keep letters, turn whitespace and separator punctuation into single spaces, trim.
pub fn strip_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() || SEPARATOR_PUNCTUATION.contains(&c) {
            pending_space = !out.is_empty();
        } else if c.is_alphabetic() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_hebrew_punctuation() {
        assert_eq!(strip_punctuation("שלום, עולם."), "שלום עולם");
        assert_eq!(strip_punctuation(""), "");
        assert_eq!(strip_punctuation("   \t "), "");
        assert_eq!(strip_punctuation("בית־הספר"), "בית הספר");
        assert_eq!(strip_punctuation("x1y2 3z"), "xy z");
    }

    #[test]
    fn latin_example() {
        assert_eq!(strip_punctuation("a.b,c  d"), "ab c d");
    }

    // Character-class table for ASCII, written out by hand.
    fn ascii_class(b: u8) -> u8 {
        match b {
            b'a'..=b'z' | b'A'..=b'Z' => b'L',
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => b'S',
            b',' | b';' | b':' | b'/' | b'-' | b'|' => b'S',
            _ => b'X',
        }
    }

    fn oracle(s: &str) -> String {
        let mut words: Vec<String> = vec![String::new()];
        for b in s.bytes() {
            match ascii_class(b) {
                b'L' => words.last_mut().unwrap().push(b as char),
                b'S' => words.push(String::new()),
                _ => {}
            }
        }
        words.retain(|w| !w.is_empty());
        words.join(" ")
    }

    #[test]
    fn every_ascii_character_is_classified() {
        for b in 0u8..128 {
            let s = format!("x{}y", b as char);
            assert_eq!(strip_punctuation(&s), oracle(&s), "byte {b}");
        }
    }

    proptest! {
        #[test]
        fn matches_class_oracle(s in "[ -~\t\n]{0,40}") {
            prop_assert_eq!(strip_punctuation(&s), oracle(&s));
        }

        #[test]
        fn output_shape(s in "\\PC{0,40}") {
            let out = strip_punctuation(&s);
            prop_assert!(!out.starts_with(' ') && !out.ends_with(' '));
            prop_assert!(!out.contains("  "));
            prop_assert!(out.chars().all(|c| c == ' ' || c.is_alphabetic()));
        }
    }
}
