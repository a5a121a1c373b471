//! Span-level relaxed and strict F-scores, conversation-level set scoring,
//! and relation scoring.
//!
//! Every reference span `i` gets a recall credit `R_i` from the predicted
//! tags on its tokens and every predicted span `j` a precision credit `P_j`
//! from the reference tags on its tokens. Relaxed credit is the matched
//! fraction; strict credit is the product of per-token matches, so a span
//! only counts when all of its tokens agree. Overall recall and precision
//! are unweighted means of the credits.
//!
//! Empty sides follow fixed conventions: no reference spans gives recall 1,
//! no predicted spans gives precision 1, and both empty gives F1 = 1.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bio::token_tags;
use crate::corpus::{AnnotationSet, LabeledSpan, Task};
use crate::error::{Error, Result};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Relaxed,
    Strict,
}

/// What has to agree for a token to match: the tag alone, or tag and status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKey {
    Tag,
    TagPlusStatus,
}

impl MatchKey {
    pub fn key_of(self, span: &LabeledSpan) -> String {
        match self {
            MatchKey::Tag => span.tag.clone(),
            MatchKey::TagPlusStatus => span.composed_tag(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Span,
    ConversationSet,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Reference items.
    pub n: usize,
    /// Predicted items.
    pub m: usize,
}

impl LabelScore {
    pub fn from_means(recall_sum: f64, n: usize, precision_sum: f64, m: usize) -> Self {
        let recall = if n == 0 { 1.0 } else { recall_sum / n as f64 };
        let precision = if m == 0 { 1.0 } else { precision_sum / m as f64 };
        LabelScore {
            recall,
            precision,
            f1: f1(precision, recall),
            n,
            m,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `0.90 (0.94, 0.87)`: F1 (precision, recall).
impl fmt::Display for LabelScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2}, {:.2})", self.f1, self.precision, self.recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_label: BTreeMap<String, LabelScore>,
    pub overall: LabelScore,
    pub mode: ScoreMode,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    recall: f64,
    n: usize,
    precision: f64,
    m: usize,
}

impl Sums {
    fn add(&mut self, other: &Sums) {
        self.recall += other.recall;
        self.n += other.n;
        self.precision += other.precision;
        self.m += other.m;
    }

    fn finish(&self) -> LabelScore {
        LabelScore::from_means(self.recall, self.n, self.precision, self.m)
    }
}

/// Running span credits; merge per-conversation accumulators to score a
/// corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpanScoreAccumulator {
    per_label: BTreeMap<String, Sums>,
    overall: Sums,
}

impl SpanScoreAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        reference: &AnnotationSet,
        predicted: &AnnotationSet,
        mode: ScoreMode,
        key: MatchKey,
    ) -> Result<()> {
        if reference.task != predicted.task {
            return Err(Error::TaskMismatch(reference.task, predicted.task));
        }
        if reference.conversation_id != predicted.conversation_id {
            return Err(Error::ConversationMismatch(
                reference.conversation_id.clone(),
                predicted.conversation_id.clone(),
            ));
        }
        let ref_tokens = project_tokens(reference, key)?;
        let pred_tokens = project_tokens(predicted, key)?;
        for span in &reference.spans {
            let credit = span_credit(span, key, &pred_tokens, mode);
            let label = key.key_of(span);
            let sums = self.per_label.entry(label).or_default();
            sums.recall += credit;
            sums.n += 1;
            self.overall.recall += credit;
            self.overall.n += 1;
        }
        for span in &predicted.spans {
            let credit = span_credit(span, key, &ref_tokens, mode);
            let label = key.key_of(span);
            let sums = self.per_label.entry(label).or_default();
            sums.precision += credit;
            sums.m += 1;
            self.overall.precision += credit;
            self.overall.m += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SpanScoreAccumulator) {
        for (label, sums) in &other.per_label {
            self.per_label.entry(label.clone()).or_default().add(sums);
        }
        self.overall.add(&other.overall);
    }

    pub fn report(&self, mode: ScoreMode) -> ScoreReport {
        ScoreReport {
            per_label: self.per_label.iter().map(|(k, v)| (k.clone(), v.finish())).collect(),
            overall: self.overall.finish(),
            mode,
            granularity: Granularity::Span,
        }
    }
}

fn span_credit(span: &LabeledSpan, key: MatchKey, other: &HashMap<(usize, usize), String>, mode: ScoreMode) -> f64 {
    let label = key.key_of(span);
    let len = span.len();
    if len == 0 {
        return 0.0;
    }
    let hits = (span.start..span.end)
        .filter(|&t| other.get(&(span.turn_index, t)) == Some(&label))
        .count();
    match mode {
        ScoreMode::Relaxed => hits as f64 / len as f64,
        ScoreMode::Strict => {
            if hits == len {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Map each covered (turn, token) to its span's label. Tokens outside any
/// span are absent.
pub fn project_tokens(annotation: &AnnotationSet, key: MatchKey) -> Result<HashMap<(usize, usize), String>> {
    let mut map: HashMap<(usize, usize), String> = HashMap::new();
    let mut owner: HashMap<(usize, usize), &str> = HashMap::new();
    for span in &annotation.spans {
        let label = key.key_of(span);
        for t in span.start..span.end {
            let pos = (span.turn_index, t);
            if let Some(prev) = owner.insert(pos, &span.span_id) {
                return Err(Error::OverlappingSpans {
                    turn: span.turn_index,
                    first: prev.to_string(),
                    second: span.span_id.clone(),
                });
            }
            map.insert(pos, label.clone());
        }
    }
    Ok(map)
}

/// Score one predicted annotation against its reference.
pub fn score_spans(
    reference: &AnnotationSet,
    predicted: &AnnotationSet,
    mode: ScoreMode,
    key: MatchKey,
) -> Result<ScoreReport> {
    let mut acc = SpanScoreAccumulator::new();
    acc.add(reference, predicted, mode, key)?;
    Ok(acc.report(mode))
}

fn pair_up<'a>(
    references: &'a [AnnotationSet],
    predictions: &'a [AnnotationSet],
) -> Vec<(AnnotationSet, AnnotationSet)> {
    let pred_index: HashMap<(&str, Task), &AnnotationSet> = predictions
        .iter()
        .map(|p| ((p.conversation_id.as_str(), p.task), p))
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in references {
        let key = (r.conversation_id.as_str(), r.task);
        seen.insert(key);
        let p = pred_index
            .get(&key)
            .map(|p| (*p).clone())
            .unwrap_or_else(|| AnnotationSet::new(r.conversation_id.clone(), "", r.task));
        out.push((r.clone(), p));
    }
    for p in predictions {
        let key = (p.conversation_id.as_str(), p.task);
        if !seen.contains(&key) {
            out.push((AnnotationSet::new(p.conversation_id.clone(), "", p.task), p.clone()));
        }
    }
    out
}

/// Pool span credits over every (conversation, task) present on either
/// side. A side with no annotation for a conversation counts as empty.
pub fn score_corpus(
    references: &[AnnotationSet],
    predictions: &[AnnotationSet],
    mode: ScoreMode,
    key: MatchKey,
) -> Result<ScoreReport> {
    let mut acc = SpanScoreAccumulator::new();
    for (r, p) in pair_up(references, predictions) {
        acc.add(&r, &p, mode, key)?;
    }
    Ok(acc.report(mode))
}

fn set_scores(reference: &BTreeSet<String>, predicted: &BTreeSet<String>) -> (f64, f64) {
    let hits = reference.intersection(predicted).count() as f64;
    let recall = if reference.is_empty() {
        1.0
    } else {
        hits / reference.len() as f64
    };
    let precision = if predicted.is_empty() {
        1.0
    } else {
        hits / predicted.len() as f64
    };
    (recall, precision)
}

/// Conversation-level scoring for closed-class tasks: each side reduces to
/// its set of distinct keys per conversation, so repeated mentions count
/// once. Precision and recall are macro-averaged over conversations.
///
/// With an ontology, only entity spans are considered.
pub fn score_conversation_set(
    references: &[AnnotationSet],
    predictions: &[AnnotationSet],
    key: MatchKey,
    entities_of: Option<&Ontology>,
) -> Result<ScoreReport> {
    let keys_of = |a: &AnnotationSet| -> BTreeSet<String> {
        a.spans
            .iter()
            .filter(|s| entities_of.is_none_or(|o| o.is_entity(&s.tag)))
            .map(|s| key.key_of(s))
            .collect()
    };
    let mut recall_sum = 0.0;
    let mut precision_sum = 0.0;
    let mut conversations = 0usize;
    let mut per_label: BTreeMap<String, Sums> = BTreeMap::new();
    let (mut n, mut m) = (0, 0);

    for (r, p) in pair_up(references, predictions) {
        if !r.task.is_closed_class() {
            return Err(Error::OpenClassTask(r.task));
        }
        let rk = keys_of(&r);
        let pk = keys_of(&p);
        let (rec, prec) = set_scores(&rk, &pk);
        recall_sum += rec;
        precision_sum += prec;
        conversations += 1;
        n += rk.len();
        m += pk.len();
        for k in &rk {
            let s = per_label.entry(k.clone()).or_default();
            s.n += 1;
            s.recall += f64::from(u8::from(pk.contains(k)));
        }
        for k in &pk {
            let s = per_label.entry(k.clone()).or_default();
            s.m += 1;
            s.precision += f64::from(u8::from(rk.contains(k)));
        }
    }

    let (recall, precision) = if conversations == 0 {
        (1.0, 1.0)
    } else {
        (recall_sum / conversations as f64, precision_sum / conversations as f64)
    };
    Ok(ScoreReport {
        per_label: per_label.iter().map(|(k, v)| (k.clone(), v.finish())).collect(),
        overall: LabelScore {
            recall,
            precision,
            f1: f1(precision, recall),
            n,
            m,
        },
        mode: ScoreMode::Strict,
        granularity: Granularity::ConversationSet,
    })
}

/// Position-and-tag identity of a span, used to line up relation endpoints.
type SpanKey = (usize, usize, usize, String);

fn span_key(span: &LabeledSpan) -> SpanKey {
    (span.turn_index, span.start, span.end, span.tag.clone())
}

fn relation_keys(ann: &AnnotationSet) -> BTreeSet<(SpanKey, SpanKey)> {
    let index = ann.span_index();
    ann.relations
        .iter()
        .filter_map(|(a, b)| {
            let ka = span_key(index.get(a.as_str())?);
            let kb = span_key(index.get(b.as_str())?);
            Some(if ka <= kb { (ka, kb) } else { (kb, ka) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelationCounts {
    pub correct: usize,
    pub reference: usize,
    pub predicted: usize,
}

impl RelationCounts {
    pub fn merge(&mut self, other: &RelationCounts) {
        self.correct += other.correct;
        self.reference += other.reference;
        self.predicted += other.predicted;
    }

    pub fn report(&self) -> ScoreReport {
        let c = self.correct as f64;
        ScoreReport {
            per_label: BTreeMap::new(),
            overall: LabelScore::from_means(c, self.reference, c, self.predicted),
            mode: ScoreMode::Strict,
            granularity: Granularity::Relation,
        }
    }
}

/// A predicted link is correct when both endpoints match reference spans
/// exactly (same tag and extent) and those reference spans are linked.
pub fn relation_counts(reference: &AnnotationSet, predicted: &AnnotationSet) -> RelationCounts {
    let r = relation_keys(reference);
    let p = relation_keys(predicted);
    RelationCounts {
        correct: p.intersection(&r).count(),
        reference: r.len(),
        predicted: p.len(),
    }
}

pub fn score_relations(reference: &AnnotationSet, predicted: &AnnotationSet) -> ScoreReport {
    relation_counts(reference, predicted).report()
}

pub fn score_relations_corpus(references: &[AnnotationSet], predictions: &[AnnotationSet]) -> ScoreReport {
    let mut total = RelationCounts::default();
    for (r, p) in pair_up(references, predictions) {
        total.merge(&relation_counts(&r, &p));
    }
    total.report()
}

/// Tokens whose composed tag (or `O`) agrees between two annotations of
/// the same conversation, as (agreeing, total).
pub fn token_tag_accuracy(
    reference: &AnnotationSet,
    candidate: &AnnotationSet,
    turn_lengths: &[usize],
) -> Result<(usize, usize)> {
    if reference.conversation_id != candidate.conversation_id {
        return Err(Error::ConversationMismatch(
            reference.conversation_id.clone(),
            candidate.conversation_id.clone(),
        ));
    }
    let a = token_tags(&reference.spans, turn_lengths, true)?;
    let b = token_tags(&candidate.spans, turn_lengths, true)?;
    let mut hits = 0;
    let mut total = 0;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        total += 1;
        hits += usize::from(x == y);
    }
    Ok((hits, total))
}
