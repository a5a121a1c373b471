use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate conversation id {0:?}")]
    DuplicateConversation(String),

    #[error("invalid ontology: {0}")]
    InvalidOntology(String),

    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),

    #[error("overlapping spans {first:?} and {second:?} in turn {turn}")]
    OverlappingSpans { turn: usize, first: String, second: String },

    #[error("span {span_id:?} lies outside conversation {conversation_id:?}")]
    SpanOutOfRange { conversation_id: String, span_id: String },

    #[error("unknown conversation {0:?}")]
    UnknownConversation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("task mismatch: {0} vs {1}")]
    TaskMismatch(crate::corpus::Task, crate::corpus::Task),

    #[error("conversation mismatch: {0:?} vs {1:?}")]
    ConversationMismatch(String, String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("no labelers to vote over")]
    NoLabelers,

    #[error("missing reference for conversation {0:?}")]
    MissingReference(String),

    #[error("requested {requested} reviewers but only {available} labelers were scored")]
    TooManyReviewers { requested: usize, available: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid template markup: {0}")]
    InvalidTemplate(String),

    #[error("conversation {0:?} is not in the train split")]
    NotInTrainSplit(String),

    #[error("conversation-set scoring needs a closed-class task, got {0}")]
    OpenClassTask(crate::corpus::Task),

    #[error("unknown error record {0:?}")]
    UnknownRecord(String),

    #[error("invalid value {value:?} for {field}")]
    InvalidEnum { field: &'static str, value: String },

    #[error("unsupported model version {0}")]
    ModelVersion(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
