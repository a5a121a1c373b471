//! Alignment of predictions against a reference into Deletion, Insertion
//! and Substitution records, plus manual categorization and reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotationSet, Conversation, LabeledSpan, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    Deletion,
    Insertion,
    Substitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCause {
    AgreeWithModel,
    IncorrectSpan,
    AmbiguousTag,
    IrrelevantAttribute,
    FailToUseContext,
    NeedClinicalExpertise,
    BreakInConversationFlow,
    ClinicallyEquivalent,
    NoClearReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relevance {
    Relevant,
    NotRelevant,
    #[serde(rename = "NA")]
    NotApplicable,
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl ErrorCause {
    pub const ALL: [ErrorCause; 9] = [
        ErrorCause::AgreeWithModel,
        ErrorCause::IncorrectSpan,
        ErrorCause::AmbiguousTag,
        ErrorCause::IrrelevantAttribute,
        ErrorCause::FailToUseContext,
        ErrorCause::NeedClinicalExpertise,
        ErrorCause::BreakInConversationFlow,
        ErrorCause::ClinicallyEquivalent,
        ErrorCause::NoClearReason,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorCause::AgreeWithModel => "Agree with model",
            ErrorCause::IncorrectSpan => "Incorrect span",
            ErrorCause::AmbiguousTag => "Ambiguous tag",
            ErrorCause::IrrelevantAttribute => "Irrelevant attribute",
            ErrorCause::FailToUseContext => "Fail to use context",
            ErrorCause::NeedClinicalExpertise => "Need clinical expertise",
            ErrorCause::BreakInConversationFlow => "Break in conversation flow",
            ErrorCause::ClinicallyEquivalent => "Clinically equivalent",
            ErrorCause::NoClearReason => "No clear reason",
        }
    }
}

/// Accepts `FailToUseContext` as well as `fail to use context`.
impl FromStr for ErrorCause {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = squash(s);
        ErrorCause::ALL
            .into_iter()
            .find(|c| squash(c.label()) == key)
            .ok_or_else(|| Error::InvalidEnum {
                field: "error_cause",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for ErrorCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Relevance {
    pub const ALL: [Relevance; 3] = [Relevance::Relevant, Relevance::NotRelevant, Relevance::NotApplicable];

    pub fn label(self) -> &'static str {
        match self {
            Relevance::Relevant => "Relevant",
            Relevance::NotRelevant => "Not relevant",
            Relevance::NotApplicable => "N/A",
        }
    }
}

impl FromStr for Relevance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = squash(s);
        Relevance::ALL
            .into_iter()
            .find(|r| squash(r.label()) == key || (key == "notapplicable" && *r == Relevance::NotApplicable))
            .ok_or_else(|| Error::InvalidEnum {
                field: "clinical_relevance",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: String,
    pub rater_id: String,
    pub error_cause: ErrorCause,
    pub clinical_relevance: Relevance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub record_id: String,
    pub conversation_id: String,
    pub task: Task,
    pub error_type: ErrorType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_span: Option<LabeledSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_span: Option<LabeledSpan>,
    pub context: String,
    #[serde(default)]
    pub error_cause: Option<ErrorCause>,
    #[serde(default, alias = "error_impact")]
    pub clinical_relevance: Option<Relevance>,
    #[serde(default)]
    pub rater_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditEntry>,
}

impl ErrorRecord {
    pub fn is_categorized(&self) -> bool {
        self.error_cause.is_some() || self.clinical_relevance.is_some()
    }
}

fn span_key(span: Option<&LabeledSpan>) -> String {
    span.map_or_else(
        || "-".to_string(),
        |s| format!("{}:{}-{}:{}", s.turn_index, s.start, s.end, s.composed_tag()),
    )
}

/// Stable id from conversation, task, type and both spans.
pub fn record_id(
    conversation_id: &str,
    task: Task,
    error_type: ErrorType,
    ref_span: Option<&LabeledSpan>,
    pred_span: Option<&LabeledSpan>,
) -> String {
    let text = format!(
        "{conversation_id}\n{task}\n{error_type}\n{}\n{}",
        span_key(ref_span),
        span_key(pred_span)
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Text of the turns around `turn`, one `SPEAKER: tokens` line each.
pub fn context_window(conversation: &Conversation, turn: usize, radius: usize) -> String {
    let lo = turn.saturating_sub(radius);
    let hi = (turn + radius + 1).min(conversation.turns.len());
    (lo..hi)
        .map(|t| {
            let tr = &conversation.turns[t];
            format!("{}: {}", tr.speaker.as_str(), tr.text())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// Matched pairs with equal composed tags, as (reference, predicted)
    /// indices.
    pub correct: Vec<(usize, usize)>,
    pub records: Vec<ErrorRecord>,
}

impl Alignment {
    pub fn count(&self, t: ErrorType) -> usize {
        self.records.iter().filter(|r| r.error_type == t).count()
    }
}

/// Greedy maximum-overlap pairing. Pairs are taken by larger token overlap,
/// then earlier reference position, then earlier predicted position.
pub fn align(
    reference: &AnnotationSet,
    predicted: &AnnotationSet,
    conversation: Option<&Conversation>,
) -> Result<Alignment> {
    if reference.conversation_id != predicted.conversation_id {
        return Err(Error::ConversationMismatch(
            reference.conversation_id.clone(),
            predicted.conversation_id.clone(),
        ));
    }
    if reference.task != predicted.task {
        return Err(Error::TaskMismatch(reference.task, predicted.task));
    }
    let pos = |s: &LabeledSpan| (s.turn_index, s.start, s.end);
    let mut candidates = Vec::new();
    for (i, r) in reference.spans.iter().enumerate() {
        for (j, p) in predicted.spans.iter().enumerate() {
            let ov = r.overlap(p);
            if ov > 0 {
                candidates.push((ov, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| pos(&reference.spans[a.1]).cmp(&pos(&reference.spans[b.1])))
            .then_with(|| pos(&predicted.spans[a.2]).cmp(&pos(&predicted.spans[b.2])))
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut ref_used = vec![false; reference.spans.len()];
    let mut pred_used = vec![false; predicted.spans.len()];
    let mut out = Alignment::default();
    let mut errors: Vec<(ErrorType, Option<usize>, Option<usize>)> = Vec::new();
    for (_, i, j) in candidates {
        if ref_used[i] || pred_used[j] {
            continue;
        }
        ref_used[i] = true;
        pred_used[j] = true;
        if reference.spans[i].composed_tag() == predicted.spans[j].composed_tag() {
            out.correct.push((i, j));
        } else {
            errors.push((ErrorType::Substitution, Some(i), Some(j)));
        }
    }
    errors.extend(
        (0..ref_used.len())
            .filter(|&i| !ref_used[i])
            .map(|i| (ErrorType::Deletion, Some(i), None)),
    );
    errors.extend(
        (0..pred_used.len())
            .filter(|&j| !pred_used[j])
            .map(|j| (ErrorType::Insertion, None, Some(j))),
    );
    errors.sort_by_key(|&(t, i, j)| {
        let span = i
            .map(|i| &reference.spans[i])
            .or(j.map(|j| &predicted.spans[j]))
            .unwrap();
        (pos(span), t)
    });
    out.correct.sort_unstable();

    for (error_type, i, j) in errors {
        let ref_span = i.map(|i| reference.spans[i].clone());
        let pred_span = j.map(|j| predicted.spans[j].clone());
        let anchor = ref_span.as_ref().or(pred_span.as_ref()).unwrap();
        let context = conversation
            .map(|c| context_window(c, anchor.turn_index, 1))
            .unwrap_or_default();
        out.records.push(ErrorRecord {
            record_id: record_id(
                &reference.conversation_id,
                reference.task,
                error_type,
                ref_span.as_ref(),
                pred_span.as_ref(),
            ),
            conversation_id: reference.conversation_id.clone(),
            task: reference.task,
            error_type,
            ref_span,
            pred_span,
            context,
            error_cause: None,
            clinical_relevance: None,
            rater_id: None,
            audit: Vec::new(),
        });
    }
    Ok(out)
}

/// Error records only; correct pairs are dropped.
pub fn align_errors(
    reference: &AnnotationSet,
    predicted: &AnnotationSet,
    conversation: Option<&Conversation>,
) -> Result<Vec<ErrorRecord>> {
    Ok(align(reference, predicted, conversation)?.records)
}

/// Set the category of one record and append to its audit trail. Later
/// calls overwrite the current values; the trail keeps every entry.
pub fn record_category<'a>(
    records: &'a mut [ErrorRecord],
    record_id: &str,
    error_cause: &str,
    clinical_relevance: &str,
    rater_id: &str,
    timestamp: &str,
) -> Result<&'a ErrorRecord> {
    let cause: ErrorCause = error_cause.parse()?;
    let relevance: Relevance = clinical_relevance.parse()?;
    let record = records
        .iter_mut()
        .find(|r| r.record_id == record_id)
        .ok_or_else(|| Error::UnknownRecord(record_id.to_string()))?;
    record.error_cause = Some(cause);
    record.clinical_relevance = Some(relevance);
    record.rater_id = Some(rater_id.to_string());
    record.audit.push(AuditEntry {
        timestamp: timestamp.to_string(),
        rater_id: rater_id.to_string(),
        error_cause: cause,
        clinical_relevance: relevance,
    });
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total: usize,
    pub uncategorized: usize,
    pub by_type: BTreeMap<ErrorType, usize>,
    /// Proportions over records carrying a cause.
    pub by_cause: BTreeMap<ErrorCause, f64>,
    /// Proportions over records carrying a relevance judgement.
    pub by_relevance: BTreeMap<Relevance, f64>,
}

pub fn aggregate_report(records: &[ErrorRecord]) -> ErrorReport {
    let mut report = ErrorReport {
        total: records.len(),
        ..Default::default()
    };
    let mut causes: BTreeMap<ErrorCause, usize> = BTreeMap::new();
    let mut relevance: BTreeMap<Relevance, usize> = BTreeMap::new();
    for r in records {
        *report.by_type.entry(r.error_type).or_default() += 1;
        if !r.is_categorized() {
            report.uncategorized += 1;
        }
        if let Some(c) = r.error_cause {
            *causes.entry(c).or_default() += 1;
        }
        if let Some(v) = r.clinical_relevance {
            *relevance.entry(v).or_default() += 1;
        }
    }
    let with_cause: usize = causes.values().sum();
    let with_relevance: usize = relevance.values().sum();
    report.by_cause = causes
        .into_iter()
        .map(|(k, v)| (k, v as f64 / with_cause as f64))
        .collect();
    report.by_relevance = relevance
        .into_iter()
        .map(|(k, v)| (k, v as f64 / with_relevance as f64))
        .collect();
    report
}
