//! Span lists ⇄ per-token BIO sequences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{decompose_tag, LabeledSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bio {
    B,
    I,
    O,
}

/// A token's (tag, BIO mark) pair. `Outside` is the only variant without a
/// tag, so the mark is `O` exactly when the tag is absent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenLabel {
    Outside,
    Begin(String),
    Inside(String),
}

impl TokenLabel {
    pub fn begin(tag: impl Into<String>) -> Self {
        TokenLabel::Begin(tag.into())
    }

    pub fn inside(tag: impl Into<String>) -> Self {
        TokenLabel::Inside(tag.into())
    }

    pub fn new(tag: Option<&str>, bio: Bio) -> Self {
        match (tag, bio) {
            (Some(t), Bio::B) => TokenLabel::Begin(t.to_string()),
            (Some(t), Bio::I) => TokenLabel::Inside(t.to_string()),
            _ => TokenLabel::Outside,
        }
    }

    pub fn tag(&self) -> Option<&str> {
        match self {
            TokenLabel::Outside => None,
            TokenLabel::Begin(t) | TokenLabel::Inside(t) => Some(t),
        }
    }

    pub fn bio(&self) -> Bio {
        match self {
            TokenLabel::Outside => Bio::O,
            TokenLabel::Begin(_) => Bio::B,
            TokenLabel::Inside(_) => Bio::I,
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, TokenLabel::Outside)
    }
}

/// `O`, `Drug_B`, `Drug_I`.
impl fmt::Display for TokenLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenLabel::Outside => f.write_str("O"),
            TokenLabel::Begin(t) => write!(f, "{t}_B"),
            TokenLabel::Inside(t) => write!(f, "{t}_I"),
        }
    }
}

impl std::str::FromStr for TokenLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(TokenLabel::Outside);
        }
        match s.rsplit_once('_') {
            Some((tag, "B")) if !tag.is_empty() => Ok(TokenLabel::begin(tag)),
            Some((tag, "I")) if !tag.is_empty() => Ok(TokenLabel::inside(tag)),
            _ => Err(Error::InvalidEnum {
                field: "token label",
                value: s.to_string(),
            }),
        }
    }
}

pub type TurnLabels = Vec<TokenLabel>;

/// Encode spans into one label sequence per turn.
///
/// With `compose_status`, a span carrying a status is encoded under
/// `tag|status`.
pub fn encode_bio(spans: &[LabeledSpan], turn_lengths: &[usize], compose_status: bool) -> Result<Vec<TurnLabels>> {
    let mut out: Vec<TurnLabels> = turn_lengths.iter().map(|&n| vec![TokenLabel::Outside; n]).collect();
    // owner[turn][token] = index into `spans`
    let mut owner: Vec<Vec<Option<usize>>> = turn_lengths.iter().map(|&n| vec![None; n]).collect();

    for (idx, span) in spans.iter().enumerate() {
        let len = turn_lengths.get(span.turn_index).copied();
        if span.start >= span.end || len.is_none_or(|n| span.end > n) {
            return Err(Error::SpanOutOfRange {
                conversation_id: String::new(),
                span_id: span.span_id.clone(),
            });
        }
        let tag = if compose_status {
            span.composed_tag()
        } else {
            span.tag.clone()
        };
        for tok in span.start..span.end {
            if let Some(prev) = owner[span.turn_index][tok] {
                return Err(Error::OverlappingSpans {
                    turn: span.turn_index,
                    first: spans[prev].span_id.clone(),
                    second: span.span_id.clone(),
                });
            }
            owner[span.turn_index][tok] = Some(idx);
            out[span.turn_index][tok] = if tok == span.start {
                TokenLabel::Begin(tag.clone())
            } else {
                TokenLabel::Inside(tag.clone())
            };
        }
    }
    Ok(out)
}

/// Decode label sequences into spans, coercing ill-formed input.
///
/// | previous        | current  | result             |
/// |-----------------|----------|--------------------|
/// | any             | `O`      | close open span    |
/// | any             | `x_B`    | start new span `x` |
/// | `O` / start     | `x_I`    | start new span `x` |
/// | `y_B` / `y_I`   | `x_I`    | start new span `x` when `x ≠ y`, else extend |
///
/// Span ids are `s1`, `s2`, … in position order. With `decompose_status`,
/// `tag|status` is split back into tag and status.
pub fn decode_bio(sequences: &[TurnLabels], decompose_status: bool) -> Vec<LabeledSpan> {
    let mut spans = Vec::new();
    for (turn, seq) in sequences.iter().enumerate() {
        let mut open: Option<(usize, &str)> = None;
        let mut close = |open: &mut Option<(usize, &str)>, end: usize| {
            if let Some((start, tag)) = open.take() {
                let (tag, status) = if decompose_status {
                    decompose_tag(tag)
                } else {
                    (tag.to_string(), None)
                };
                spans.push(LabeledSpan {
                    span_id: String::new(),
                    turn_index: turn,
                    start,
                    end,
                    tag,
                    status,
                });
            }
        };
        for (t, label) in seq.iter().enumerate() {
            match label {
                TokenLabel::Outside => close(&mut open, t),
                TokenLabel::Begin(tag) => {
                    close(&mut open, t);
                    open = Some((t, tag));
                }
                TokenLabel::Inside(tag) => match open {
                    Some((_, cur)) if cur == tag => {}
                    _ => {
                        close(&mut open, t);
                        open = Some((t, tag));
                    }
                },
            }
        }
        close(&mut open, seq.len());
    }
    for (i, span) in spans.iter_mut().enumerate() {
        span.span_id = format!("s{}", i + 1);
    }
    spans
}

/// Apply the coercion rules of [`decode_bio`] without leaving label space.
pub fn normalize(sequences: &[TurnLabels]) -> Vec<TurnLabels> {
    sequences
        .iter()
        .map(|seq| {
            let mut prev: Option<&str> = None;
            seq.iter()
                .map(|label| {
                    let out = match label {
                        TokenLabel::Outside => TokenLabel::Outside,
                        TokenLabel::Begin(t) => TokenLabel::Begin(t.clone()),
                        TokenLabel::Inside(t) if prev == Some(t.as_str()) => TokenLabel::Inside(t.clone()),
                        TokenLabel::Inside(t) => TokenLabel::Begin(t.clone()),
                    };
                    prev = label.tag();
                    out
                })
                .collect()
        })
        .collect()
}

/// Per-token tags only (`None` for O); convenient for token-level metrics.
pub fn token_tags(
    spans: &[LabeledSpan],
    turn_lengths: &[usize],
    compose_status: bool,
) -> Result<Vec<Vec<Option<String>>>> {
    let mut out: Vec<Vec<Option<String>>> = turn_lengths.iter().map(|&n| vec![None; n]).collect();
    let encoded = encode_bio(spans, turn_lengths, compose_status)?;
    for (turn, seq) in encoded.into_iter().enumerate() {
        for (t, label) in seq.into_iter().enumerate() {
            out[turn][t] = label.tag().map(str::to_string);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type Extent<'a> = (usize, usize, &'a str);

    fn labels(s: &str) -> TurnLabels {
        s.split_whitespace().map(|l| l.parse().unwrap()).collect()
    }

    #[test]
    fn encode_drug_span() {
        let spans = [LabeledSpan::new("s1", 0, 1, 3, "Drug")];
        let enc = encode_bio(&spans, &[3], false).unwrap();
        assert_eq!(enc, vec![labels("O Drug_B Drug_I")]);
    }

    #[test]
    fn encode_nothing_is_all_outside() {
        let enc = encode_bio(&[], &[2, 1], false).unwrap();
        assert_eq!(enc, vec![labels("O O"), labels("O")]);
    }

    #[test]
    fn encode_composes_status() {
        let spans = [LabeledSpan::new("s1", 0, 0, 2, "GI:Nausea").with_status("Experienced")];
        let enc = encode_bio(&spans, &[2], true).unwrap();
        assert_eq!(
            enc[0],
            vec![
                TokenLabel::begin("GI:Nausea|Experienced"),
                TokenLabel::inside("GI:Nausea|Experienced")
            ]
        );
        let plain = encode_bio(&spans, &[2], false).unwrap();
        assert_eq!(plain[0], labels("GI:Nausea_B GI:Nausea_I"));
    }

    #[test]
    fn encode_reports_colliding_ids() {
        let spans = [
            LabeledSpan::new("a", 0, 0, 2, "Drug"),
            LabeledSpan::new("b", 0, 1, 3, "Drug"),
        ];
        match encode_bio(&spans, &[3], false) {
            Err(Error::OverlappingSpans { first, second, .. }) => {
                assert_eq!((first.as_str(), second.as_str()), ("a", "b"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let spans = [LabeledSpan::new("a", 0, 2, 4, "Drug")];
        assert!(matches!(
            encode_bio(&spans, &[3], false),
            Err(Error::SpanOutOfRange { .. })
        ));
        let spans = [LabeledSpan::new("a", 2, 0, 1, "Drug")];
        assert!(encode_bio(&spans, &[3], false).is_err());
    }

    #[test]
    fn decode_inverse_of_encode_example() {
        let spans = decode_bio(&[labels("O Drug_B Drug_I")], false);
        assert_eq!(spans, vec![LabeledSpan::new("s1", 0, 1, 3, "Drug")]);
    }

    // Coercion table, case by case.
    #[test]
    fn decode_coercion_table() {
        let cases: &[(&str, &[Extent])] = &[
            ("Drug_I", &[(0, 1, "Drug")]),
            ("Drug_B Freq_I", &[(0, 1, "Drug"), (1, 2, "Freq")]),
            ("O Drug_I Drug_I", &[(1, 3, "Drug")]),
            ("Drug_B Drug_B", &[(0, 1, "Drug"), (1, 2, "Drug")]),
            ("Drug_I O Drug_I", &[(0, 1, "Drug"), (2, 3, "Drug")]),
            ("Drug_B Drug_I Freq_B", &[(0, 2, "Drug"), (2, 3, "Freq")]),
        ];
        for (seq, expected) in cases {
            let got: Vec<_> = decode_bio(&[labels(seq)], false)
                .into_iter()
                .map(|s| (s.start, s.end, s.tag))
                .collect();
            let want: Vec<_> = expected.iter().map(|&(a, b, t)| (a, b, t.to_string())).collect();
            assert_eq!(got, want, "{seq}");
        }
    }

    #[test]
    fn decode_splits_status() {
        let seq = vec![TokenLabel::begin("GI:Nausea|Not Experienced")];
        let spans = decode_bio(&[seq], true);
        assert_eq!(spans[0].tag, "GI:Nausea");
        assert_eq!(spans[0].status.as_deref(), Some("Not Experienced"));
    }

    #[test]
    fn label_display_round_trip() {
        for s in ["O", "Drug_B", "GI:Abdominal Pain_I", "Property:Severity/Amount_B"] {
            assert_eq!(s.parse::<TokenLabel>().unwrap().to_string(), s);
        }
        assert!("Drug_X".parse::<TokenLabel>().is_err());
    }

    fn arb_spans() -> impl Strategy<Value = (Vec<usize>, Vec<LabeledSpan>)> {
        let tags = prop::sample::select(vec!["Drug", "Dose", "GI:Nausea"]);
        let status = prop::option::of(prop::sample::select(vec!["Experienced", "Not Experienced"]));
        prop::collection::vec(prop::collection::vec((1usize..4, 0usize..3, tags, status), 0..4), 1..4).prop_map(
            |turns| {
                let mut lengths = Vec::new();
                let mut spans = Vec::new();
                for (turn, pieces) in turns.into_iter().enumerate() {
                    let mut pos = 0;
                    for (len, gap, tag, status) in pieces {
                        pos += gap;
                        spans.push(LabeledSpan {
                            span_id: String::new(),
                            turn_index: turn,
                            start: pos,
                            end: pos + len,
                            tag: tag.to_string(),
                            status: status.map(str::to_string),
                        });
                        pos += len;
                    }
                    lengths.push(pos + 1);
                }
                for (i, s) in spans.iter_mut().enumerate() {
                    s.span_id = format!("s{}", i + 1);
                }
                (lengths, spans)
            },
        )
    }

    proptest! {
        #[test]
        fn decode_encode_is_identity((lengths, spans) in arb_spans()) {
            let enc = encode_bio(&spans, &lengths, true).unwrap();
            prop_assert_eq!(decode_bio(&enc, true), spans);
        }

        #[test]
        fn encode_decode_is_normalization(
            seq in prop::collection::vec(
                prop::sample::select(vec!["O", "A_B", "A_I", "B_B", "B_I"]), 0..10)
        ) {
            let seq: TurnLabels = seq.into_iter().map(|l| l.parse().unwrap()).collect();
            let input = vec![seq];
            let spans = decode_bio(&input, false);
            let back = encode_bio(&spans, &[input[0].len()], false).unwrap();
            prop_assert_eq!(back, normalize(&input));
        }
    }
}
