//! Voted reference construction from several labelers.
//!
//! Voting happens in two steps. The task tag of each token is decided by
//! plurality over labelers. The BIO mark is then chosen separately, as the
//! mark most often seen in the data after the previous token's voted tag
//! and with the current voted tag. Deciding the mark from context rather
//! than by counting marks is what lets three labelers who disagree on
//! boundaries still produce one clean span.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bio::{decode_bio, encode_bio, Bio, TokenLabel, TurnLabels};
use crate::corpus::{AnnotationSet, Corpus, Task};
use crate::error::{Error, Result};

pub const VOTED_LABELER: &str = "VOTED";

/// Tag context of a token: the turn start, `O`, or a (composed) task tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagState {
    Start,
    Outside,
    Tag(String),
}

impl TagState {
    fn of(tag: Option<&str>) -> TagState {
        match tag {
            Some(t) => TagState::Tag(t.to_string()),
            None => TagState::Outside,
        }
    }
}

/// Counts of (previous tag, current tag, current mark) triples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    counts: BTreeMap<(TagState, TagState, Bio), u64>,
    pub smoothing: f64,
}

impl TransitionStats {
    pub fn new() -> Self {
        TransitionStats {
            counts: BTreeMap::new(),
            smoothing: 1.0,
        }
    }

    pub fn count(&self, prev: &TagState, cur: &TagState, bio: Bio) -> u64 {
        self.counts.get(&(prev.clone(), cur.clone(), bio)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn observe_sequence(&mut self, seq: &[TokenLabel]) {
        let mut prev = TagState::Start;
        for label in seq {
            let cur = TagState::of(label.tag());
            *self.counts.entry((prev, cur.clone(), label.bio())).or_insert(0) += 1;
            prev = cur;
        }
    }

    pub fn merge(&mut self, other: &TransitionStats) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Smoothed P(mark | current tag, previous tag) over {B, I}.
    pub fn mark_probability(&self, prev: &TagState, cur: &TagState, bio: Bio) -> f64 {
        let b = self.count(prev, cur, Bio::B) as f64 + self.smoothing;
        let i = self.count(prev, cur, Bio::I) as f64 + self.smoothing;
        let num = match bio {
            Bio::B => b,
            Bio::I => i,
            Bio::O => return 0.0,
        };
        if b + i == 0.0 {
            0.5
        } else {
            num / (b + i)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(TagState, TagState, Bio), &u64)> {
        self.counts.iter()
    }
}

/// Count transitions over every labeler's status-composed encoding.
/// Annotations whose conversation is missing or whose spans collide are
/// skipped.
pub fn estimate_transition_stats(annotations: &[AnnotationSet], corpus: &Corpus) -> TransitionStats {
    let mut stats = TransitionStats::new();
    for ann in annotations {
        let Some(conv) = corpus.get(&ann.conversation_id) else {
            continue;
        };
        let Ok(seqs) = encode_bio(&ann.spans, &conv.turn_lengths(), true) else {
            continue;
        };
        for seq in &seqs {
            stats.observe_sequence(seq);
        }
    }
    stats
}

/// Plurality over tags with `O` as a candidate. Ties prefer a tag over `O`,
/// then the lexicographically smallest tag.
fn plurality<'a>(tags: impl Iterator<Item = Option<&'a str>>) -> Option<&'a str> {
    let mut votes: HashMap<Option<&str>, usize> = HashMap::new();
    for t in tags {
        *votes.entry(t).or_insert(0) += 1;
    }
    votes
        .into_iter()
        .max_by(|(ta, ca), (tb, cb)| {
            ca.cmp(cb)
                .then_with(|| ta.is_some().cmp(&tb.is_some()))
                .then_with(|| tb.cmp(ta))
        })
        .and_then(|(t, _)| t)
}

fn check_shape(per_labeler: &[Vec<TurnLabels>]) -> Result<()> {
    let first = per_labeler.first().ok_or(Error::NoLabelers)?;
    for (k, other) in per_labeler.iter().enumerate().skip(1) {
        let same = other.len() == first.len() && other.iter().zip(first).all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(Error::ShapeMismatch(format!(
                "labeler {k} does not match labeler 0's turn/token layout"
            )));
        }
    }
    Ok(())
}

/// Vote one conversation's label sequences (one `Vec<TurnLabels>` per
/// labeler, all with the same layout).
///
/// The mark is the argmax of the smoothed conditional; when both marks are
/// equally likely the mark is `B` if the tag changed from the previous
/// token and `I` otherwise. The context resets at each turn.
pub fn vote(per_labeler: &[Vec<TurnLabels>], stats: &TransitionStats) -> Result<Vec<TurnLabels>> {
    check_shape(per_labeler)?;
    let layout = &per_labeler[0];
    let mut out = Vec::with_capacity(layout.len());
    for (turn, seq) in layout.iter().enumerate() {
        let mut prev = TagState::Start;
        let mut voted = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let tag = plurality(per_labeler.iter().map(|l| l[turn][t].tag()));
            let cur = TagState::of(tag);
            let label = match tag {
                None => TokenLabel::Outside,
                Some(tag) => {
                    let b = stats.count(&prev, &cur, Bio::B);
                    let i = stats.count(&prev, &cur, Bio::I);
                    let bio = match b.cmp(&i) {
                        std::cmp::Ordering::Greater => Bio::B,
                        std::cmp::Ordering::Less => Bio::I,
                        std::cmp::Ordering::Equal if prev == cur => Bio::I,
                        std::cmp::Ordering::Equal => Bio::B,
                    };
                    TokenLabel::new(Some(tag), bio)
                }
            };
            voted.push(label);
            prev = cur;
        }
        out.push(voted);
    }
    Ok(out)
}

/// Outcome of voting on whole labels (tag and mark together) per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellVote {
    Winner(TokenLabel),
    /// Several labels share the top count; the caller would have to guess.
    Tie(Vec<TokenLabel>),
}

/// Independent majority over full labels, token by token. This is the
/// naive baseline that [`vote`] replaces.
pub fn naive_majority(per_labeler: &[Vec<TurnLabels>]) -> Result<Vec<Vec<CellVote>>> {
    check_shape(per_labeler)?;
    let layout = &per_labeler[0];
    Ok(layout
        .iter()
        .enumerate()
        .map(|(turn, seq)| {
            (0..seq.len())
                .map(|t| {
                    let mut votes: BTreeMap<&TokenLabel, usize> = BTreeMap::new();
                    for l in per_labeler {
                        *votes.entry(&l[turn][t]).or_insert(0) += 1;
                    }
                    let best = votes.values().copied().max().unwrap_or(0);
                    let top: Vec<TokenLabel> = votes
                        .into_iter()
                        .filter(|&(_, c)| c == best)
                        .map(|(l, _)| l.clone())
                        .collect();
                    if top.len() == 1 {
                        CellVote::Winner(top.into_iter().next().expect("one winner"))
                    } else {
                        CellVote::Tie(top)
                    }
                })
                .collect()
        })
        .collect())
}

/// Build one voted annotation per (conversation, task).
///
/// Relations are not voted. When `senior` names a labeler, that labeler's
/// relations are carried over wherever both endpoints survive voting
/// unchanged (same turn, extent, tag and status).
pub fn build_voted_reference(
    annotations: &[AnnotationSet],
    corpus: &Corpus,
    stats: &TransitionStats,
    senior: Option<&str>,
) -> Result<Vec<AnnotationSet>> {
    let mut groups: BTreeMap<(String, Task), Vec<&AnnotationSet>> = BTreeMap::new();
    let mut order: Vec<(String, Task)> = Vec::new();
    for ann in annotations {
        let key = (ann.conversation_id.clone(), ann.task);
        let group = groups.entry(key.clone()).or_default();
        if group.is_empty() {
            order.push(key);
        }
        group.push(ann);
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let group = &groups[&key];
        let conv = corpus.require(&key.0)?;
        let lengths = conv.turn_lengths();
        let encoded = group
            .iter()
            .map(|a| encode_bio(&a.spans, &lengths, true))
            .collect::<Result<Vec<_>>>()?;
        let voted = vote(&encoded, stats)?;
        let mut ann = AnnotationSet::new(key.0.clone(), VOTED_LABELER, key.1);
        ann.spans = decode_bio(&voted, true);

        if let Some(senior) = senior.and_then(|id| group.iter().find(|a| a.labeler_id == id)) {
            let find = |sid: &str| {
                let span = senior.span(sid)?;
                ann.spans
                    .iter()
                    .find(|v| v.same_extent_and_label(span))
                    .map(|v| v.span_id.clone())
            };
            let mut relations: Vec<(String, String)> = senior
                .relations
                .iter()
                .filter_map(|(a, b)| Some((find(a)?, find(b)?)))
                .collect();
            relations.dedup();
            ann.relations = relations;
        }
        out.push(ann);
    }
    Ok(out)
}
