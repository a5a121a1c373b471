//! Conversations, annotation sets and their JSON Lines representation.
//!
//! Everything here is plain data: loading checks syntax and the intrinsic
//! invariants of each record, while [`cross_validate`] checks references
//! between records (annotation → conversation, span → turn, tag → ontology).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::Ontology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "DR")]
    Doctor,
    #[serde(rename = "PT")]
    Patient,
    #[serde(rename = "OTHER")]
    Other,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Doctor => "DR",
            Speaker::Patient => "PT",
            Speaker::Other => "OTHER",
        }
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DR" => Ok(Speaker::Doctor),
            "PT" => Ok(Speaker::Patient),
            "OTHER" => Ok(Speaker::Other),
            _ => Err(Error::InvalidEnum {
                field: "speaker",
                value: s.to_string(),
            }),
        }
    }
}

/// Annotation pass. Each conversation is labeled once per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Symptoms,
    Medications,
    Conditions,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Symptoms, Task::Medications, Task::Conditions];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Symptoms => "symptoms",
            Task::Medications => "medications",
            Task::Conditions => "conditions",
        }
    }

    /// Symptoms and conditions draw entities from a fixed inventory;
    /// medications are an open set under a single `Drug` tag.
    pub fn is_closed_class(self) -> bool {
        !matches!(self, Task::Medications)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symptoms" => Ok(Task::Symptoms),
            "medications" => Ok(Task::Medications),
            "conditions" => Ok(Task::Conditions),
            _ => Err(Error::InvalidEnum {
                field: "task",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

impl Turn {
    pub fn new(speaker: Speaker, tokens: Vec<String>) -> Self {
        Turn { speaker, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn turn_lengths(&self) -> Vec<usize> {
        self.turns.iter().map(Turn::len).collect()
    }

    pub fn token_count(&self) -> usize {
        self.turns.iter().map(Turn::len).sum()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("conversation id is empty".into());
        }
        if self.turns.is_empty() {
            return Err(format!("conversation {:?} has no turns", self.id));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.tokens.is_empty() {
                return Err(format!("turn {i} of {:?} has no tokens", self.id));
            }
            if let Some(tok) = turn
                .tokens
                .iter()
                .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
            {
                return Err(format!("turn {i} of {:?} has malformed token {tok:?}", self.id));
            }
        }
        Ok(())
    }
}

/// A tagged token range `[start, end)` inside one turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub span_id: String,
    #[serde(rename = "turn")]
    pub turn_index: usize,
    pub start: usize,
    pub end: usize,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

impl LabeledSpan {
    pub fn new(
        span_id: impl Into<String>,
        turn_index: usize,
        start: usize,
        end: usize,
        tag: impl Into<String>,
    ) -> Self {
        LabeledSpan {
            span_id: span_id.into(),
            turn_index,
            start,
            end,
            tag: tag.into(),
            status: None,
        }
    }

    pub fn with_status(mut self, status: impl Into<String>) -> Self {
        self.status = Some(status.into());
        self
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// `tag|status` when a status is present, else the bare tag.
    pub fn composed_tag(&self) -> String {
        compose_tag(&self.tag, self.status.as_deref())
    }

    /// Same turn, same extent, same tag and status.
    pub fn same_extent_and_label(&self, other: &LabeledSpan) -> bool {
        self.turn_index == other.turn_index
            && self.start == other.start
            && self.end == other.end
            && self.tag == other.tag
            && self.status == other.status
    }

    pub fn overlap(&self, other: &LabeledSpan) -> usize {
        if self.turn_index != other.turn_index {
            return 0;
        }
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

pub const STATUS_SEPARATOR: char = '|';

pub fn compose_tag(tag: &str, status: Option<&str>) -> String {
    match status {
        Some(s) => format!("{tag}{STATUS_SEPARATOR}{s}"),
        None => tag.to_string(),
    }
}

pub fn decompose_tag(composed: &str) -> (String, Option<String>) {
    match composed.split_once(STATUS_SEPARATOR) {
        Some((tag, status)) => (tag.to_string(), Some(status.to_string())),
        None => (composed.to_string(), None),
    }
}

/// One labeler's spans and relations for one conversation and task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub conversation_id: String,
    pub labeler_id: String,
    pub task: Task,
    #[serde(default)]
    pub spans: Vec<LabeledSpan>,
    #[serde(default)]
    pub relations: Vec<(String, String)>,
}

impl AnnotationSet {
    pub fn new(conversation_id: impl Into<String>, labeler_id: impl Into<String>, task: Task) -> Self {
        AnnotationSet {
            conversation_id: conversation_id.into(),
            labeler_id: labeler_id.into(),
            task,
            spans: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn span(&self, span_id: &str) -> Option<&LabeledSpan> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }

    pub fn span_index(&self) -> HashMap<&str, &LabeledSpan> {
        self.spans.iter().map(|s| (s.span_id.as_str(), s)).collect()
    }

    /// Relations as unordered pairs, deduplicated.
    pub fn relation_set(&self) -> HashSet<(String, String)> {
        self.relations
            .iter()
            .map(|(a, b)| {
                if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect()
    }

    /// Spans sorted by position.
    pub fn sorted_spans(&self) -> Vec<&LabeledSpan> {
        let mut spans: Vec<&LabeledSpan> = self.spans.iter().collect();
        spans.sort_by_key(|s| (s.turn_index, s.start, s.end));
        spans
    }
}

/// Conversations indexed by id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    conversations: Vec<Conversation>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Result<Self> {
        let mut index = HashMap::with_capacity(conversations.len());
        for (i, conv) in conversations.iter().enumerate() {
            if index.insert(conv.id.clone(), i).is_some() {
                return Err(Error::DuplicateConversation(conv.id.clone()));
            }
        }
        Ok(Corpus { conversations, index })
    }

    pub fn get(&self, id: &str) -> Option<&Conversation> {
        self.index.get(id).map(|&i| &self.conversations[i])
    }

    pub fn require(&self, id: &str) -> Result<&Conversation> {
        self.get(id).ok_or_else(|| Error::UnknownConversation(id.to_string()))
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn iter(&self) -> impl Iterator<Item = &Conversation> {
        self.conversations.iter()
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn into_conversations(self) -> Vec<Conversation> {
        self.conversations
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for record in records {
        buf.push_str(&serde_json::to_string(record)?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_conversations(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let conversations: Vec<Conversation> = read_jsonl(path)?;
    for (i, conv) in conversations.iter().enumerate() {
        conv.check().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
    }
    Corpus::new(conversations)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    read_jsonl(path)
}

pub fn write_conversations(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    write_jsonl(path, corpus.conversations())
}

pub fn write_annotations(path: impl AsRef<Path>, annotations: &[AnnotationSet]) -> Result<()> {
    write_jsonl(path, annotations)
}

/// Train/dev/test membership by conversation id, plus the provider behind
/// each conversation when known.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub providers: std::collections::BTreeMap<String, String>,
}

impl SplitManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&src).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.train.iter().any(|t| t == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    UnknownConversation,
    MissingOntology,
    TurnOutOfRange,
    SpanOutOfRange,
    UnknownTag,
    StatusNotAllowed,
    UnknownStatus,
    DuplicateSpanId,
    DanglingRelation,
    SelfRelation,
}

/// A referential inconsistency found by [`cross_validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceIssue {
    pub kind: IssueKind,
    pub conversation_id: String,
    pub labeler_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_id: Option<String>,
    pub message: String,
}

/// Check that annotations point at existing conversations, turns, tokens
/// and ontology tags. `ontologies` is searched by task.
pub fn cross_validate(annotations: &[AnnotationSet], corpus: &Corpus, ontologies: &[Ontology]) -> Vec<ReferenceIssue> {
    let mut issues = Vec::new();
    for ann in annotations {
        let mut push = |kind, span_id: Option<&str>, message: String| {
            issues.push(ReferenceIssue {
                kind,
                conversation_id: ann.conversation_id.clone(),
                labeler_id: ann.labeler_id.clone(),
                span_id: span_id.map(str::to_string),
                message,
            })
        };
        let conv = corpus.get(&ann.conversation_id);
        if conv.is_none() {
            push(
                IssueKind::UnknownConversation,
                None,
                format!("no conversation {:?}", ann.conversation_id),
            );
        }
        let ontology = ontologies.iter().find(|o| o.task == ann.task);
        if ontology.is_none() {
            push(
                IssueKind::MissingOntology,
                None,
                format!("no ontology loaded for task {}", ann.task),
            );
        }

        let mut seen = HashSet::new();
        for span in &ann.spans {
            let sid = Some(span.span_id.as_str());
            if !seen.insert(span.span_id.as_str()) {
                push(
                    IssueKind::DuplicateSpanId,
                    sid,
                    format!("span id {:?} used twice", span.span_id),
                );
            }
            if let Some(conv) = conv {
                match conv.turns.get(span.turn_index) {
                    None => push(
                        IssueKind::TurnOutOfRange,
                        sid,
                        format!("turn {} out of range ({} turns)", span.turn_index, conv.turns.len()),
                    ),
                    Some(turn) if span.start >= span.end || span.end > turn.len() => push(
                        IssueKind::SpanOutOfRange,
                        sid,
                        format!(
                            "range [{}, {}) invalid for turn of {} tokens",
                            span.start,
                            span.end,
                            turn.len()
                        ),
                    ),
                    Some(_) => {}
                }
            }
            if let Some(ont) = ontology {
                match ont.kind_of(&span.tag) {
                    None => push(
                        IssueKind::UnknownTag,
                        sid,
                        format!("tag {:?} not in {} ontology", span.tag, ont.task),
                    ),
                    Some(kind) => {
                        if let Some(status) = &span.status {
                            if !ont.allows_status(kind) {
                                push(
                                    IssueKind::StatusNotAllowed,
                                    sid,
                                    format!("tag {:?} cannot carry a status", span.tag),
                                );
                            } else if !ont.statuses.iter().any(|s| s == status) {
                                push(
                                    IssueKind::UnknownStatus,
                                    sid,
                                    format!("status {status:?} not in ontology"),
                                );
                            }
                        }
                    }
                }
            }
        }

        for (a, b) in &ann.relations {
            if a == b {
                push(
                    IssueKind::SelfRelation,
                    Some(a),
                    format!("relation links {a:?} to itself"),
                );
            }
            for end in [a, b] {
                if !seen.contains(end.as_str()) {
                    push(
                        IssueKind::DanglingRelation,
                        Some(end),
                        format!("relation endpoint {end:?} has no span"),
                    );
                }
            }
        }
    }
    issues
}
