//! Python module `clinlabel`.
//!
//! Records cross the boundary as plain dicts and lists shaped like the
//! JSON Lines files: conversations, annotation sets, error records.

use std::collections::BTreeMap;

use clinlabel::adjudicate::{self, TransitionStats};
use clinlabel::agreement;
use clinlabel::bio::{self, TokenLabel, TurnLabels};
use clinlabel::corpus::{self, AnnotationSet, Conversation, Corpus, LabeledSpan, Task};
use clinlabel::errors::{self, ErrorRecord};
use clinlabel::ontology::Ontology;
use clinlabel::score::{self as scoring, MatchKey, ScoreMode};
use clinlabel::stats;
use clinlabel::suggest::{self as suggester, Lexicon};
use clinlabel::synth::{self, Noise, SplitSizes, SynthConfig};
use clinlabel::tagger::{self, SpanFilter, TaggerModel, TrainConfig};
use clinlabel::turns::{self, MergeMode, TurnModel};
use clinlabel::validate;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: clinlabel::Error) -> PyErr {
    match e {
        clinlabel::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn corpus_of(obj: &Bound<'_, PyAny>) -> PyResult<Corpus> {
    Corpus::new(from_py::<Vec<Conversation>>(obj)?).map_err(err)
}

fn task_of(name: &str) -> PyResult<Task> {
    name.parse().map_err(err)
}

fn labels_of(rows: Vec<Vec<String>>) -> PyResult<Vec<TurnLabels>> {
    rows.into_iter()
        .map(|row| row.iter().map(|l| l.parse::<TokenLabel>().map_err(err)).collect())
        .collect()
}

fn label_strings(rows: &[TurnLabels]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| r.iter().map(ToString::to_string).collect())
        .collect()
}

fn mode_of(name: &str) -> PyResult<ScoreMode> {
    match name {
        "relaxed" => Ok(ScoreMode::Relaxed),
        "strict" => Ok(ScoreMode::Strict),
        _ => Err(PyValueError::new_err(format!("unknown mode {name:?}"))),
    }
}

fn key_of(name: &str) -> PyResult<MatchKey> {
    match name {
        "tag" => Ok(MatchKey::Tag),
        "tag_status" => Ok(MatchKey::TagPlusStatus),
        _ => Err(PyValueError::new_err(format!("unknown key {name:?}"))),
    }
}

/// Load a JSON Lines file of conversations.
#[pyfunction]
fn load_conversations<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let corpus = corpus::load_conversations(path).map_err(err)?;
    to_py(py, &corpus.conversations())
}

#[pyfunction]
fn load_annotations<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &corpus::load_annotations(path).map_err(err)?)
}

#[pyfunction]
fn save_annotations(path: &str, annotations: &Bound<'_, PyAny>) -> PyResult<()> {
    let anns: Vec<AnnotationSet> = from_py(annotations)?;
    corpus::write_annotations(path, &anns).map_err(err)
}

/// Built-in ontology for a task.
#[pyfunction]
fn default_ontology<'py>(py: Python<'py>, task: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &Ontology::default_for(task_of(task)?))
}

#[pyfunction]
#[pyo3(signature = (spans, turn_lengths, compose_status=true))]
fn encode_bio(spans: &Bound<'_, PyAny>, turn_lengths: Vec<usize>, compose_status: bool) -> PyResult<Vec<Vec<String>>> {
    let spans: Vec<LabeledSpan> = from_py(spans)?;
    let encoded = bio::encode_bio(&spans, &turn_lengths, compose_status).map_err(err)?;
    Ok(label_strings(&encoded))
}

#[pyfunction]
#[pyo3(signature = (labels, decompose_status=true))]
fn decode_bio<'py>(py: Python<'py>, labels: Vec<Vec<String>>, decompose_status: bool) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &bio::decode_bio(&labels_of(labels)?, decompose_status))
}

/// Vote over labelers' token labels for one conversation. Transition
/// statistics come from the given rows unless annotations and
/// conversations are supplied to estimate them.
#[pyfunction]
#[pyo3(signature = (per_labeler, annotations=None, conversations=None))]
fn vote(
    per_labeler: Vec<Vec<Vec<String>>>,
    annotations: Option<&Bound<'_, PyAny>>,
    conversations: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<Vec<String>>> {
    let rows = per_labeler.into_iter().map(labels_of).collect::<PyResult<Vec<_>>>()?;
    let stats = match (annotations, conversations) {
        (Some(a), Some(c)) => adjudicate::estimate_transition_stats(&from_py::<Vec<AnnotationSet>>(a)?, &corpus_of(c)?),
        _ => {
            let mut s = TransitionStats::new();
            for seq in rows.iter().flatten() {
                s.observe_sequence(seq);
            }
            s
        }
    };
    Ok(label_strings(&adjudicate::vote(&rows, &stats).map_err(err)?))
}

/// Per-token plurality; each cell is a label or a list of tied labels.
#[pyfunction]
fn naive_majority<'py>(py: Python<'py>, per_labeler: Vec<Vec<Vec<String>>>) -> PyResult<Bound<'py, PyAny>> {
    let rows = per_labeler.into_iter().map(labels_of).collect::<PyResult<Vec<_>>>()?;
    let cells = adjudicate::naive_majority(&rows).map_err(err)?;
    let out: Vec<Vec<serde_json::Value>> = cells
        .iter()
        .map(|turn| {
            turn.iter()
                .map(|c| match c {
                    adjudicate::CellVote::Winner(l) => serde_json::Value::from(l.to_string()),
                    adjudicate::CellVote::Tie(ls) => ls.iter().map(ToString::to_string).collect(),
                })
                .collect()
        })
        .collect();
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (annotations, conversations, senior=None))]
fn build_voted_reference<'py>(
    py: Python<'py>,
    annotations: &Bound<'py, PyAny>,
    conversations: &Bound<'py, PyAny>,
    senior: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let anns: Vec<AnnotationSet> = from_py(annotations)?;
    let corpus = corpus_of(conversations)?;
    let stats = adjudicate::estimate_transition_stats(&anns, &corpus);
    to_py(
        py,
        &adjudicate::build_voted_reference(&anns, &corpus, &stats, senior).map_err(err)?,
    )
}

/// Score predictions against references; granularity is "span",
/// "conversation" or "relation".
#[pyfunction]
#[pyo3(signature = (references, predictions, mode="relaxed", key="tag_status", granularity="span"))]
fn score<'py>(
    py: Python<'py>,
    references: &Bound<'py, PyAny>,
    predictions: &Bound<'py, PyAny>,
    mode: &str,
    key: &str,
    granularity: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let refs: Vec<AnnotationSet> = from_py(references)?;
    let preds: Vec<AnnotationSet> = from_py(predictions)?;
    let report = match granularity {
        "span" => scoring::score_corpus(&refs, &preds, mode_of(mode)?, key_of(key)?).map_err(err)?,
        "conversation" => scoring::score_conversation_set(&refs, &preds, key_of(key)?, None).map_err(err)?,
        "relation" => scoring::score_relations_corpus(&refs, &preds),
        other => return Err(PyValueError::new_err(format!("unknown granularity {other:?}"))),
    };
    to_py(py, &report)
}

#[pyfunction]
fn pairwise_kappa<'py>(
    py: Python<'py>,
    a: &Bound<'py, PyAny>,
    b: &Bound<'py, PyAny>,
    conversation: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let conv: Conversation = from_py(conversation)?;
    let k = agreement::pairwise_kappa(&from_py(a)?, &from_py(b)?, &conv).map_err(err)?;
    to_py(py, &k)
}

#[pyfunction]
fn agreement_matrix<'py>(
    py: Python<'py>,
    annotations: &Bound<'py, PyAny>,
    conversations: &Bound<'py, PyAny>,
    task: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let anns: Vec<AnnotationSet> = from_py(annotations)?;
    let ont = Ontology::default_for(task_of(task)?);
    to_py(
        py,
        &agreement::agreement_matrix(&anns, &corpus_of(conversations)?, &ont).map_err(err)?,
    )
}

#[pyfunction]
fn qa_scores(annotations: &Bound<'_, PyAny>, reference: &Bound<'_, PyAny>) -> PyResult<BTreeMap<String, f64>> {
    agreement::qa_scores(
        &from_py::<Vec<AnnotationSet>>(annotations)?,
        &from_py::<Vec<AnnotationSet>>(reference)?,
    )
    .map_err(err)
}

#[pyfunction]
fn select_reviewers(scores: BTreeMap<String, f64>, k: usize) -> PyResult<Vec<String>> {
    agreement::select_reviewers(&scores, k).map_err(err)
}

/// Violations of one annotation set against its task's built-in ontology.
#[pyfunction]
fn validate_annotation<'py>(py: Python<'py>, annotation: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let ann: AnnotationSet = from_py(annotation)?;
    to_py(
        py,
        &validate::validate_annotation(&ann, &Ontology::default_for(ann.task)),
    )
}

/// Lexicon suggestions; `lexicon` maps surface forms to tags.
#[pyfunction]
fn suggest<'py>(
    py: Python<'py>,
    conversation: &Bound<'py, PyAny>,
    lexicon: BTreeMap<String, String>,
) -> PyResult<Bound<'py, PyAny>> {
    let conv: Conversation = from_py(conversation)?;
    let mut lex = Lexicon::default();
    for (surface, tag) in &lexicon {
        lex.insert(surface, tag).map_err(err)?;
    }
    to_py(py, &suggester::suggest(&conv, &lex))
}

#[pyfunction]
#[pyo3(signature = (gold, conversations, miss_rate, accept_rate, lexicon, seed=0))]
fn recall_experiment<'py>(
    py: Python<'py>,
    gold: &Bound<'py, PyAny>,
    conversations: &Bound<'py, PyAny>,
    miss_rate: f64,
    accept_rate: f64,
    lexicon: BTreeMap<String, String>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut lex = Lexicon::default();
    for (surface, tag) in &lexicon {
        lex.insert(surface, tag).map_err(err)?;
    }
    let gold: Vec<AnnotationSet> = from_py(gold)?;
    let r = suggester::recall_experiment(&gold, &corpus_of(conversations)?, miss_rate, accept_rate, &lex, seed)
        .map_err(err)?;
    to_py(py, &r)
}

/// Synthetic corpus: dict with conversations, gold, split and (when
/// `labelers` > 0) simulated labeler annotations.
#[pyfunction]
#[pyo3(signature = (seed=0, train=160, dev=20, test=20, labelers=3))]
fn synthesize<'py>(
    py: Python<'py>,
    seed: u64,
    train: usize,
    dev: usize,
    test: usize,
    labelers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let config = SynthConfig {
        seed,
        split: SplitSizes { train, dev, test },
        ..Default::default()
    };
    let (corpus, gold, split) = synth::generate_corpus(&config).map_err(err)?;
    let panel = if labelers > 0 {
        synth::simulate_panel(&gold, &corpus, &Noise::default(), labelers, seed).map_err(err)?
    } else {
        Vec::new()
    };
    #[derive(Serialize)]
    struct Out<'a> {
        conversations: &'a [Conversation],
        gold: &'a [AnnotationSet],
        split: &'a corpus::SplitManifest,
        labelers: &'a [AnnotationSet],
    }
    to_py(
        py,
        &Out {
            conversations: corpus.conversations(),
            gold: &gold,
            split: &split,
            labelers: &panel,
        },
    )
}

#[pyfunction]
#[pyo3(signature = (reference, predicted, conversation=None))]
fn align_errors<'py>(
    py: Python<'py>,
    reference: &Bound<'py, PyAny>,
    predicted: &Bound<'py, PyAny>,
    conversation: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let conv: Option<Conversation> = conversation.map(from_py).transpose()?;
    let records = errors::align_errors(&from_py(reference)?, &from_py(predicted)?, conv.as_ref()).map_err(err)?;
    to_py(py, &records)
}

#[pyfunction]
fn error_report<'py>(py: Python<'py>, records: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<ErrorRecord> = from_py(records)?;
    to_py(py, &errors::aggregate_report(&records))
}

#[pyfunction]
#[pyo3(signature = (annotations, conversations=None, unique=false))]
fn annotation_stats<'py>(
    py: Python<'py>,
    annotations: &Bound<'py, PyAny>,
    conversations: Option<&Bound<'py, PyAny>>,
    unique: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let anns: Vec<AnnotationSet> = from_py(annotations)?;
    let corpus = conversations.map(corpus_of).transpose()?;
    to_py(
        py,
        &stats::annotation_stats(&anns, corpus.as_ref(), unique).map_err(err)?,
    )
}

/// Averaged-perceptron span tagger for one task.
#[pyclass(module = "clinlabel")]
struct Tagger {
    model: TaggerModel,
}

#[pymethods]
impl Tagger {
    /// Train on gold annotations; `span_filter` is "all", "entities_only"
    /// or "attributes_only".
    #[staticmethod]
    #[pyo3(signature = (gold, conversations, task, epochs=10, seed=0, span_filter="all"))]
    fn train(
        gold: &Bound<'_, PyAny>,
        conversations: &Bound<'_, PyAny>,
        task: &str,
        epochs: usize,
        seed: u64,
        span_filter: &str,
    ) -> PyResult<Self> {
        let filter: SpanFilter = serde_json::from_value(serde_json::Value::from(span_filter))
            .map_err(|_| PyValueError::new_err(format!("unknown span filter {span_filter:?}")))?;
        let gold: Vec<AnnotationSet> = from_py(gold)?;
        let config = TrainConfig { epochs, seed, filter };
        let model = tagger::train(
            &gold,
            &corpus_of(conversations)?,
            &Ontology::default_for(task_of(task)?),
            &config,
        )
        .map_err(err)?;
        Ok(Tagger { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Tagger {
            model: TaggerModel::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(err)
    }

    #[getter]
    fn task(&self) -> String {
        self.model.task.to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.model.labels.iter().map(ToString::to_string).collect()
    }

    fn predict<'py>(&self, py: Python<'py>, conversation: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let conv: Conversation = from_py(conversation)?;
        to_py(py, &tagger::predict(&self.model, &conv))
    }
}

/// Per-turn attribute-class detector.
#[pyclass(module = "clinlabel")]
struct TurnDetector {
    model: TurnModel,
}

#[pymethods]
impl TurnDetector {
    /// `task` restricts training to one task's annotations.
    #[staticmethod]
    #[pyo3(signature = (gold, conversations, epochs=10, seed=0, task=None))]
    fn train(
        gold: &Bound<'_, PyAny>,
        conversations: &Bound<'_, PyAny>,
        epochs: usize,
        seed: u64,
        task: Option<&str>,
    ) -> PyResult<Self> {
        let merge = match task {
            Some(t) => MergeMode::PerTask(task_of(t)?),
            None => MergeMode::AllTasks,
        };
        let gold: Vec<AnnotationSet> = from_py(gold)?;
        let model = turns::train_turns(&gold, &corpus_of(conversations)?, epochs, seed, merge).map_err(err)?;
        Ok(TurnDetector { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(TurnDetector {
            model: TurnModel::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(err)
    }

    /// Class names per turn.
    fn predict(&self, conversation: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<String>>> {
        let conv: Conversation = from_py(conversation)?;
        Ok(turns::predict_turns(&self.model, &conv)
            .iter()
            .map(|set| set.iter().map(ToString::to_string).collect())
            .collect())
    }
}

#[pymodule]
#[pyo3(name = "clinlabel")]
fn clinlabel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(load_conversations, m)?)?;
    m.add_function(wrap_pyfunction!(load_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(save_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(default_ontology, m)?)?;
    m.add_function(wrap_pyfunction!(encode_bio, m)?)?;
    m.add_function(wrap_pyfunction!(decode_bio, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(naive_majority, m)?)?;
    m.add_function(wrap_pyfunction!(build_voted_reference, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(agreement_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(qa_scores, m)?)?;
    m.add_function(wrap_pyfunction!(select_reviewers, m)?)?;
    m.add_function(wrap_pyfunction!(validate_annotation, m)?)?;
    m.add_function(wrap_pyfunction!(suggest, m)?)?;
    m.add_function(wrap_pyfunction!(recall_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(align_errors, m)?)?;
    m.add_function(wrap_pyfunction!(error_report, m)?)?;
    m.add_function(wrap_pyfunction!(annotation_stats, m)?)?;
    m.add_class::<Tagger>()?;
    m.add_class::<TurnDetector>()?;
    Ok(())
}
