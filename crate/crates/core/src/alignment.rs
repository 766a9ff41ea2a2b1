//! Tokenizer-agnostic task-alignment weights.
//!
//! The frontier model reports one probability per *frontier* token. The proxy
//! model tokenizes the same text differently, so the probabilities are first
//! spread over individual bytes ("letters") and then averaged back within each
//! proxy token. A letter is a UTF-8 byte: this coincides with characters on
//! ASCII text and stays well-defined for byte-level tokenizers.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-byte frontier probabilities covering a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterProbSequence {
    text: String,
    probs: Vec<f64>,
}

impl LetterProbSequence {
    pub fn new(text: String, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != text.len() {
            return Err(Error::invalid(format!(
                "{} letter probabilities for {} bytes of text",
                probs.len(),
                text.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !valid_prob(*p)) {
            return Err(Error::invalid(format!(
                "letter probability {} at byte {i} is outside (0, 1]",
                probs[i]
            )));
        }
        Ok(Self { text, probs })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// A proxy token's byte range `[byte_start, byte_end)` within the trace text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub token_text: String,
    pub byte_start: usize,
    pub byte_end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.byte_end - self.byte_start
    }

    pub fn is_empty(&self) -> bool {
        self.byte_end == self.byte_start
    }
}

/// Raw per-token weights together with their MinMax image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl WeightVector {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        let normalized = minmax_normalize(&raw)?;
        Ok(Self { raw, normalized })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

fn valid_prob(p: f64) -> bool {
    p > 0.0 && p <= 1.0
}

/// Assigns each byte of every frontier token that token's probability.
///
/// The token texts must concatenate to `trace_text`; the first byte where
/// they diverge is reported in the error.
pub fn expand_to_letters<S: AsRef<str>>(frontier_tokens: &[(S, f64)], trace_text: &str) -> Result<LetterProbSequence> {
    let expected = trace_text.as_bytes();
    let mut probs = Vec::with_capacity(expected.len());
    for (text, prob) in frontier_tokens {
        if !valid_prob(*prob) {
            return Err(Error::invalid(format!("frontier probability {prob} is outside (0, 1]")));
        }
        for &b in text.as_ref().as_bytes() {
            let offset = probs.len();
            if expected.get(offset) != Some(&b) {
                return Err(Error::Alignment {
                    offset,
                    message: if offset >= expected.len() {
                        "frontier tokens overrun the trace text".into()
                    } else {
                        "frontier tokens diverge from the trace text".into()
                    },
                });
            }
            probs.push(*prob);
        }
    }
    if probs.len() != expected.len() {
        return Err(Error::Alignment {
            offset: probs.len(),
            message: "frontier tokens end before the trace text".into(),
        });
    }
    LetterProbSequence::new(trace_text.to_owned(), probs)
}

/// Greedy sequential prefix matching of proxy tokens against the trace.
pub fn align_spans<S: AsRef<str>>(trace_text: &str, proxy_tokens: &[S]) -> Result<Vec<TokenSpan>> {
    let bytes = trace_text.as_bytes();
    let mut spans = Vec::with_capacity(proxy_tokens.len());
    let mut cursor = 0usize;
    for (i, token) in proxy_tokens.iter().enumerate() {
        let token = token.as_ref();
        if token.is_empty() {
            return Err(Error::Alignment {
                offset: cursor,
                message: format!("proxy token {i} is empty"),
            });
        }
        let end = cursor + token.len();
        if end > bytes.len() {
            return Err(Error::Alignment {
                offset: cursor,
                message: format!(
                    "proxy token {i} ({token:?}) overshoots the trace by {} bytes",
                    end - bytes.len()
                ),
            });
        }
        if &bytes[cursor..end] != token.as_bytes() {
            let diff = token
                .as_bytes()
                .iter()
                .zip(&bytes[cursor..end])
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(Error::Alignment {
                offset: cursor + diff,
                message: format!("proxy token {i} ({token:?}) does not match the trace"),
            });
        }
        spans.push(TokenSpan {
            token_text: token.to_owned(),
            byte_start: cursor,
            byte_end: end,
        });
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(Error::Alignment {
            offset: cursor,
            message: format!("{} trailing bytes not covered by proxy tokens", bytes.len() - cursor),
        });
    }
    Ok(spans)
}

/// Mean letter probability inside each span.
pub fn token_weights(letters: &LetterProbSequence, spans: &[TokenSpan]) -> Result<Vec<f64>> {
    if spans.is_empty() {
        return Err(Error::invalid("no proxy token spans"));
    }
    let mut expected_start = 0;
    let mut out = Vec::with_capacity(spans.len());
    for span in spans {
        if span.byte_start != expected_start || span.byte_end <= span.byte_start {
            return Err(Error::Alignment {
                offset: span.byte_start,
                message: "spans must be contiguous, ordered and non-empty".into(),
            });
        }
        if span.byte_end > letters.len() {
            return Err(Error::Alignment {
                offset: letters.len(),
                message: "span extends past the letter sequence".into(),
            });
        }
        let slice = &letters.probs[span.byte_start..span.byte_end];
        // a constant span averages to its value exactly, keeping uniform traces degenerate
        let w = if slice.iter().all(|&p| p == slice[0]) {
            slice[0]
        } else {
            slice.iter().sum::<f64>() / slice.len() as f64
        };
        out.push(w);
        expected_start = span.byte_end;
    }
    if expected_start != letters.len() {
        return Err(Error::Alignment {
            offset: expected_start,
            message: "spans do not cover the whole trace".into(),
        });
    }
    Ok(out)
}

/// `(x - min) / (max - min)`; when every value is equal the result is all ones.
pub fn minmax_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight list"));
    }
    if raw.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("non-finite weight"));
    }
    let (min, max) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
        (lo.min(w), hi.max(w))
    });
    if max == min {
        return Ok(vec![1.0; raw.len()]);
    }
    let range = max - min;
    Ok(raw.iter().map(|&w| ((w - min) / range).clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn letters_from_two_tokens() {
        let letters = expand_to_letters(&[("Hel", 0.9), ("lo", 0.6)], "Hello").unwrap();
        assert_eq!(letters.probs(), &[0.9, 0.9, 0.9, 0.6, 0.6]);
    }

    #[test]
    fn single_token_letters() {
        let letters = expand_to_letters(&[("a", 0.37)], "a").unwrap();
        assert_eq!(letters.probs(), &[0.37]);
    }

    #[test]
    fn letter_mismatch_reports_offset() {
        match expand_to_letters(&[("ab", 0.5), ("d", 0.5)], "abc") {
            Err(Error::Alignment { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        match expand_to_letters(&[("ab", 0.5)], "abc") {
            Err(Error::Alignment { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_probability() {
        assert!(expand_to_letters(&[("a", 0.0)], "a").is_err());
        assert!(expand_to_letters(&[("a", 1.5)], "a").is_err());
    }

    #[test]
    fn multibyte_characters_get_one_prob_per_byte() {
        let letters = expand_to_letters(&[("é", 0.5), ("x", 0.25)], "éx").unwrap();
        assert_eq!(letters.probs(), &[0.5, 0.5, 0.25]);
    }

    #[test]
    fn spans_basic() {
        let spans = align_spans("Hello", &["Hel", "lo"]).unwrap();
        let ranges: Vec<_> = spans.iter().map(|s| (s.byte_start, s.byte_end)).collect();
        assert_eq!(ranges, vec![(0, 3), (3, 5)]);

        let spans = align_spans("a b", &["a", " b"]).unwrap();
        let ranges: Vec<_> = spans.iter().map(|s| (s.byte_start, s.byte_end)).collect();
        assert_eq!(ranges, vec![(0, 1), (1, 3)]);
    }

    #[test]
    fn span_errors() {
        assert!(matches!(
            align_spans("abc", &["ab", "cd"]),
            Err(Error::Alignment { offset: 2, .. })
        ));
        assert!(matches!(
            align_spans("abc", &["ab"]),
            Err(Error::Alignment { offset: 2, .. })
        ));
        assert!(matches!(
            align_spans("abc", &["ax", "c"]),
            Err(Error::Alignment { offset: 1, .. })
        ));
        assert!(align_spans("abc", &["", "abc"]).is_err());
    }

    #[test]
    fn weight_of_whole_word() {
        let letters = expand_to_letters(&[("Hel", 0.9), ("lo", 0.6)], "Hello").unwrap();
        let spans = align_spans("Hello", &["Hello"]).unwrap();
        assert_eq!(token_weights(&letters, &spans).unwrap(), vec![0.78]);
    }

    #[test]
    fn identity_segmentation_recovers_frontier_probs() {
        let toks = [("The", 0.3), (" cat", 0.8), (" sat", 0.55)];
        let letters = expand_to_letters(&toks, "The cat sat").unwrap();
        let spans = align_spans("The cat sat", &["The", " cat", " sat"]).unwrap();
        assert_eq!(token_weights(&letters, &spans).unwrap(), vec![0.3, 0.8, 0.55]);
    }

    #[test]
    fn empty_spans_rejected() {
        let letters = expand_to_letters(&[("a", 0.5)], "a").unwrap();
        assert!(matches!(token_weights(&letters, &[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn uniform_letters_give_equal_weights() {
        let letters = expand_to_letters(&[("abcdefg", 0.7), ("hij", 0.7)], "abcdefghij").unwrap();
        let spans = align_spans("abcdefghij", &["abcdefg", "hij"]).unwrap();
        let w = token_weights(&letters, &spans).unwrap();
        assert_eq!(w, vec![0.7, 0.7]);
        assert_eq!(minmax_normalize(&w).unwrap(), vec![1.0, 1.0]);
    }

    fn assert_close(got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn minmax_examples() {
        assert_close(&minmax_normalize(&[0.2, 0.5, 0.8]).unwrap(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[0.4, 0.4]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(minmax_normalize(&[0.7]).unwrap(), vec![1.0]);
        assert_close(&minmax_normalize(&[0.1, 0.9, 0.5]).unwrap(), &[0.0, 1.0, 0.5]);
        assert!(minmax_normalize(&[]).is_err());
    }

    fn segmentation(len: usize, cuts: &[usize]) -> Vec<(usize, usize)> {
        let mut points: Vec<usize> = cuts.iter().map(|c| c % len).filter(|c| *c > 0).collect();
        points.sort_unstable();
        points.dedup();
        let mut out = Vec::new();
        let mut start = 0;
        for p in points.into_iter().chain(std::iter::once(len)) {
            out.push((start, p));
            start = p;
        }
        out
    }

    proptest! {
        #[test]
        fn minmax_is_affine_invariant(
            raw in prop::collection::vec(0.0f64..1.0, 2..40),
            a in 0.5f64..50.0,
            b in -5.0f64..5.0,
        ) {
            let spread = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - raw.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread >= 0.1);
            let base = minmax_normalize(&raw).unwrap();
            let shifted: Vec<f64> = raw.iter().map(|w| a * w + b).collect();
            let moved = minmax_normalize(&shifted).unwrap();
            for (x, y) in base.iter().zip(&moved) {
                prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }

        #[test]
        fn normalized_weights_are_bounded(raw in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let out = minmax_normalize(&raw).unwrap();
            prop_assert!(out.iter().all(|w| (0.0..=1.0).contains(w)));
            if raw.iter().any(|w| *w != raw[0]) {
                prop_assert!(out.contains(&0.0));
                prop_assert!(out.contains(&1.0));
            }
        }

        #[test]
        fn byte_weighted_mean_is_conserved(
            probs in prop::collection::vec(0.01f64..=1.0, 1..60),
            cuts in prop::collection::vec(0usize..1000, 0..20),
        ) {
            let text = "x".repeat(probs.len());
            let letters = LetterProbSequence::new(text.clone(), probs.clone()).unwrap();
            let segs = segmentation(probs.len(), &cuts);
            let tokens: Vec<&str> = segs.iter().map(|(s, e)| &text[*s..*e]).collect();
            let spans = align_spans(&text, &tokens).unwrap();
            let weights = token_weights(&letters, &spans).unwrap();
            let weighted: f64 = weights.iter().zip(&spans).map(|(w, s)| w * s.len() as f64).sum();
            let direct: f64 = probs.iter().sum();
            prop_assert!((weighted / probs.len() as f64 - direct / probs.len() as f64).abs() < 1e-12);
        }
    }
}
