//! Inter-labeler agreement and labeler quality scoring.
//!
//! Kappa is computed over tokens: each token's category is its composed
//! tag (`tag|status`), with `O` as a category of its own. A pair of
//! labelers agrees on a token only when both the tag and the status match.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bio::token_tags;
use crate::corpus::{AnnotationSet, Conversation, Corpus, LabeledSpan, Task};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, TagKind};
use crate::score::{score_spans, MatchKey, ScoreMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub kappa: f64,
    /// p_o
    pub observed: f64,
    /// p_e
    pub chance: f64,
}

/// Token contingency counts for one labeler pair; merge to pool.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KappaCounts {
    total: u64,
    agree: u64,
    a: BTreeMap<Option<String>, u64>,
    b: BTreeMap<Option<String>, u64>,
}

impl KappaCounts {
    pub fn observe(&mut self, a: Option<&str>, b: Option<&str>) {
        self.total += 1;
        if a == b {
            self.agree += 1;
        }
        *self.a.entry(a.map(str::to_string)).or_insert(0) += 1;
        *self.b.entry(b.map(str::to_string)).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &KappaCounts) {
        self.total += other.total;
        self.agree += other.agree;
        for (k, v) in &other.a {
            *self.a.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.b {
            *self.b.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Cohen's kappa. When chance agreement is 1 (both labelers used a
    /// single identical category throughout) kappa is 1 if they agree
    /// everywhere and 0 otherwise.
    pub fn kappa(&self) -> Kappa {
        if self.total == 0 {
            return Kappa {
                kappa: 1.0,
                observed: 1.0,
                chance: 1.0,
            };
        }
        let n = self.total as f64;
        let observed = self.agree as f64 / n;
        // integer products keep p_e exact for small examples
        let joint: u128 = self
            .a
            .iter()
            .map(|(c, &na)| na as u128 * self.b.get(c).copied().unwrap_or(0) as u128)
            .sum();
        let chance = joint as f64 / (self.total as u128 * self.total as u128) as f64;
        let kappa = if chance >= 1.0 {
            if observed >= 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (observed - chance) / (1.0 - chance)
        };
        Kappa {
            kappa,
            observed,
            chance,
        }
    }
}

fn check_pair(a: &AnnotationSet, b: &AnnotationSet, conv: &Conversation) -> Result<()> {
    if a.conversation_id != b.conversation_id {
        return Err(Error::ConversationMismatch(
            a.conversation_id.clone(),
            b.conversation_id.clone(),
        ));
    }
    if a.conversation_id != conv.id {
        return Err(Error::ConversationMismatch(a.conversation_id.clone(), conv.id.clone()));
    }
    if a.task != b.task {
        return Err(Error::TaskMismatch(a.task, b.task));
    }
    Ok(())
}

fn counts_for(
    a: &AnnotationSet,
    b: &AnnotationSet,
    conv: &Conversation,
    keep: impl Fn(&LabeledSpan) -> bool,
) -> Result<KappaCounts> {
    check_pair(a, b, conv)?;
    let lengths = conv.turn_lengths();
    let filter = |ann: &AnnotationSet| -> Vec<LabeledSpan> { ann.spans.iter().filter(|s| keep(s)).cloned().collect() };
    let shape = |e: Error| match e {
        Error::SpanOutOfRange { span_id, .. } => {
            Error::ShapeMismatch(format!("span {span_id:?} does not fit conversation {:?}", conv.id))
        }
        other => other,
    };
    let ta = token_tags(&filter(a), &lengths, true).map_err(shape)?;
    let tb = token_tags(&filter(b), &lengths, true).map_err(shape)?;
    let mut counts = KappaCounts::default();
    for (ra, rb) in ta.iter().zip(&tb) {
        for (x, y) in ra.iter().zip(rb) {
            counts.observe(x.as_deref(), y.as_deref());
        }
    }
    Ok(counts)
}

/// Token-level kappa between two labelers on one conversation.
pub fn pairwise_kappa(a: &AnnotationSet, b: &AnnotationSet, conversation: &Conversation) -> Result<Kappa> {
    Ok(counts_for(a, b, conversation, |_| true)?.kappa())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Entities,
    Attributes,
    Relations,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Entities, Category::Attributes, Category::Relations];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Entities => "entities",
            Category::Attributes => "attributes",
            Category::Relations => "relations",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub labeler_a: String,
    pub labeler_b: String,
    pub category: Category,
    /// Kappa for entities/attributes; for relations, the fraction of
    /// links between strictly matched spans that both labelers drew.
    /// `None` when the category never occurs for this pair.
    pub agreement: Option<f64>,
    pub observed: Option<f64>,
    pub chance: Option<f64>,
    pub conversations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub task: Task,
    pub pairs: Vec<PairAgreement>,
    /// Mean over pairs; `None` when no pair has the category.
    pub mean: BTreeMap<Category, Option<f64>>,
    /// Strict span agreement per pair: |A ∩ B| / |A ∪ B| over
    /// (turn, start, end, tag|status).
    pub span_agreement: BTreeMap<String, f64>,
}

#[derive(Default)]
struct PairAccumulator {
    entities: KappaCounts,
    attributes: KappaCounts,
    has_entities: bool,
    has_attributes: bool,
    links_shared: usize,
    links_union: usize,
    spans_shared: usize,
    spans_union: usize,
    conversations: usize,
}

type SpanSig = (usize, usize, usize, String);

fn sig(s: &LabeledSpan) -> SpanSig {
    (s.turn_index, s.start, s.end, s.composed_tag())
}

fn links(ann: &AnnotationSet, matched: &BTreeSet<SpanSig>) -> BTreeSet<(SpanSig, SpanSig)> {
    let index = ann.span_index();
    ann.relations
        .iter()
        .filter_map(|(x, y)| {
            let (sx, sy) = (sig(index.get(x.as_str())?), sig(index.get(y.as_str())?));
            if !matched.contains(&sx) || !matched.contains(&sy) {
                return None;
            }
            Some(if sx <= sy { (sx, sy) } else { (sy, sx) })
        })
        .collect()
}

/// Mean pairwise agreement per category over all conversations of the
/// ontology's task that have at least two labelers. Counts for a labeler
/// pair are pooled over the conversations both labeled.
pub fn agreement_matrix(
    annotations: &[AnnotationSet],
    corpus: &Corpus,
    ontology: &Ontology,
) -> Result<AgreementReport> {
    let mut by_conv: BTreeMap<&str, Vec<&AnnotationSet>> = BTreeMap::new();
    for ann in annotations.iter().filter(|a| a.task == ontology.task) {
        by_conv.entry(&ann.conversation_id).or_default().push(ann);
    }
    let kind = |s: &LabeledSpan| ontology.kind_of(&s.tag);

    let mut pairs: BTreeMap<(String, String), PairAccumulator> = BTreeMap::new();
    for (conv_id, mut anns) in by_conv {
        if anns.len() < 2 {
            continue;
        }
        let conv = corpus.require(conv_id)?;
        anns.sort_by(|a, b| a.labeler_id.cmp(&b.labeler_id));
        for i in 0..anns.len() {
            for j in i + 1..anns.len() {
                let (a, b) = (anns[i], anns[j]);
                let acc = pairs.entry((a.labeler_id.clone(), b.labeler_id.clone())).or_default();
                acc.conversations += 1;
                let is = |k| move |s: &LabeledSpan| kind(s) == Some(k);
                acc.entities.merge(&counts_for(a, b, conv, is(TagKind::Entity))?);
                acc.attributes.merge(&counts_for(a, b, conv, is(TagKind::Attribute))?);
                let any = |k: TagKind| a.spans.iter().chain(&b.spans).any(|s| kind(s) == Some(k));
                acc.has_entities |= any(TagKind::Entity);
                acc.has_attributes |= any(TagKind::Attribute);

                let sa: BTreeSet<SpanSig> = a.spans.iter().map(sig).collect();
                let sb: BTreeSet<SpanSig> = b.spans.iter().map(sig).collect();
                let matched: BTreeSet<SpanSig> = sa.intersection(&sb).cloned().collect();
                acc.spans_shared += matched.len();
                acc.spans_union += sa.union(&sb).count();
                let la = links(a, &matched);
                let lb = links(b, &matched);
                acc.links_shared += la.intersection(&lb).count();
                acc.links_union += la.union(&lb).count();
            }
        }
    }

    let mut report = AgreementReport {
        task: ontology.task,
        pairs: Vec::new(),
        mean: BTreeMap::new(),
        span_agreement: BTreeMap::new(),
    };
    let mut sums: HashMap<Category, (f64, usize)> = HashMap::new();
    for ((la, lb), acc) in pairs {
        let kappa_entry = |category, counts: &KappaCounts, present: bool| {
            let k = present.then(|| counts.kappa());
            PairAgreement {
                labeler_a: la.clone(),
                labeler_b: lb.clone(),
                category,
                agreement: k.map(|k| k.kappa),
                observed: k.map(|k| k.observed),
                chance: k.map(|k| k.chance),
                conversations: acc.conversations,
            }
        };
        let entries = [
            kappa_entry(Category::Entities, &acc.entities, acc.has_entities),
            kappa_entry(Category::Attributes, &acc.attributes, acc.has_attributes),
            PairAgreement {
                labeler_a: la.clone(),
                labeler_b: lb.clone(),
                category: Category::Relations,
                agreement: (acc.links_union > 0).then(|| acc.links_shared as f64 / acc.links_union as f64),
                observed: None,
                chance: None,
                conversations: acc.conversations,
            },
        ];
        for e in entries {
            if let Some(v) = e.agreement {
                let s = sums.entry(e.category).or_insert((0.0, 0));
                s.0 += v;
                s.1 += 1;
            }
            report.pairs.push(e);
        }
        let rate = if acc.spans_union == 0 {
            1.0
        } else {
            acc.spans_shared as f64 / acc.spans_union as f64
        };
        report.span_agreement.insert(format!("{la}~{lb}"), rate);
    }
    for c in Category::ALL {
        report.mean.insert(c, sums.get(&c).map(|&(s, n)| s / n as f64));
    }
    Ok(report)
}

/// Mean relaxed F1 (tag and status must match) of a labeler's annotations
/// against the reference set. A labeler with no annotations scores 0.
pub fn qa_score(labeler: &[AnnotationSet], reference: &[AnnotationSet]) -> Result<f64> {
    let refs: HashMap<(&str, Task), &AnnotationSet> = reference
        .iter()
        .map(|r| ((r.conversation_id.as_str(), r.task), r))
        .collect();
    if labeler.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ann in labeler {
        let r = refs
            .get(&(ann.conversation_id.as_str(), ann.task))
            .ok_or_else(|| Error::MissingReference(ann.conversation_id.clone()))?;
        let mut pred = ann.clone();
        pred.labeler_id = r.labeler_id.clone();
        total += score_spans(r, &pred, ScoreMode::Relaxed, MatchKey::TagPlusStatus)?
            .overall
            .f1;
    }
    Ok(total / labeler.len() as f64)
}

/// [`qa_score`] for every labeler present in `annotations`.
pub fn qa_scores(annotations: &[AnnotationSet], reference: &[AnnotationSet]) -> Result<BTreeMap<String, f64>> {
    let mut by_labeler: BTreeMap<&str, Vec<AnnotationSet>> = BTreeMap::new();
    for a in annotations {
        by_labeler.entry(&a.labeler_id).or_default().push(a.clone());
    }
    by_labeler
        .into_iter()
        .map(|(id, anns)| Ok((id.to_string(), qa_score(&anns, reference)?)))
        .collect()
}

/// Top `k` labelers by score; equal scores go to the lexicographically
/// smaller id.
pub fn select_reviewers(scores: &BTreeMap<String, f64>, k: usize) -> Result<Vec<String>> {
    if k > scores.len() {
        return Err(Error::TooManyReviewers {
            requested: k,
            available: scores.len(),
        });
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(id, &s)| (id, s)).collect();
    ranked.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
    Ok(ranked.into_iter().take(k).map(|(id, _)| id.clone()).collect())
}

/// Entity span counts for the ontology's task, keyed by tag. Every entity
/// tag of the ontology is present, with 0 when unused.
pub fn tag_counts(annotations: &[AnnotationSet], ontology: &Ontology) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = ontology.entities.iter().map(|e| (e.tag.clone(), 0)).collect();
    for s in annotations
        .iter()
        .filter(|a| a.task == ontology.task)
        .flat_map(|a| &a.spans)
    {
        if let Some(c) = counts.get_mut(&s.tag) {
            *c += 1;
        }
    }
    counts
}

/// One-vs-rest token kappa per entity tag, pooled over every labeler pair
/// on every conversation. Status is ignored. Tags nobody used get kappa 1.
pub fn tag_kappas(annotations: &[AnnotationSet], corpus: &Corpus, ontology: &Ontology) -> Result<HashMap<String, f64>> {
    let mut by_conv: BTreeMap<&str, Vec<&AnnotationSet>> = BTreeMap::new();
    for ann in annotations.iter().filter(|a| a.task == ontology.task) {
        by_conv.entry(&ann.conversation_id).or_default().push(ann);
    }
    let mut counts: HashMap<&str, KappaCounts> = ontology
        .entities
        .iter()
        .map(|e| (e.tag.as_str(), KappaCounts::default()))
        .collect();
    for (conv_id, anns) in by_conv {
        if anns.len() < 2 {
            continue;
        }
        let conv = corpus.require(conv_id)?;
        let lengths = conv.turn_lengths();
        let grids = anns
            .iter()
            .map(|a| token_tags(&a.spans, &lengths, false))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..grids.len() {
            for j in i + 1..grids.len() {
                let tokens: Vec<(Option<&str>, Option<&str>)> = grids[i]
                    .iter()
                    .flatten()
                    .zip(grids[j].iter().flatten())
                    .map(|(x, y)| (x.as_deref(), y.as_deref()))
                    .collect();
                for (tag, acc) in counts.iter_mut() {
                    for &(x, y) in &tokens {
                        let hit = |v: Option<&str>| (v == Some(*tag)).then_some(*tag);
                        acc.observe(hit(x), hit(y));
                    }
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(t, c)| (t.to_string(), c.kappa().kappa))
        .collect())
}
