//! Turn-level detection of six attribute classes, and turn-granularity
//! evaluation of both turn models and projected span predictions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, Conversation, Corpus, Task, Turn};
use crate::error::{Error, Result};
use crate::score::LabelScore;

pub const TURN_MODEL_VERSION: u32 = 1;
const BIAS: &str = "<bias>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TurnClass {
    Frequency,
    Duration,
    Location,
    Severity,
    #[serde(rename = "Alleviating Factor")]
    AlleviatingFactor,
    #[serde(rename = "Provoking Factor")]
    ProvokingFactor,
}

impl TurnClass {
    pub const ALL: [TurnClass; 6] = [
        TurnClass::Frequency,
        TurnClass::Duration,
        TurnClass::Location,
        TurnClass::Severity,
        TurnClass::AlleviatingFactor,
        TurnClass::ProvokingFactor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TurnClass::Frequency => "Frequency",
            TurnClass::Duration => "Duration",
            TurnClass::Location => "Location",
            TurnClass::Severity => "Severity",
            TurnClass::AlleviatingFactor => "Alleviating Factor",
            TurnClass::ProvokingFactor => "Provoking Factor",
        }
    }

    /// Class of an attribute tag such as `Property:Severity/Amount`.
    pub fn of_tag(tag: &str) -> Option<TurnClass> {
        let name = tag.rsplit(':').next().unwrap_or(tag);
        let head = name.split('/').next().unwrap_or(name);
        TurnClass::ALL.into_iter().find(|c| c.as_str() == head)
    }
}

impl fmt::Display for TurnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TurnClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TurnClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidEnum {
                field: "turn class",
                value: s.to_string(),
            })
    }
}

pub type TurnClasses = BTreeSet<TurnClass>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    AllTasks,
    PerTask(Task),
}

impl MergeMode {
    pub fn admits(self, task: Task) -> bool {
        match self {
            MergeMode::AllTasks => true,
            MergeMode::PerTask(t) => t == task,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MergeMode::AllTasks => "all",
            MergeMode::PerTask(t) => t.as_str(),
        }
    }
}

/// Lowercased unigrams and adjacent bigrams of a turn, plus the bias.
pub fn turn_features(turn: &Turn) -> Vec<String> {
    let toks: Vec<String> = turn.tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut f: BTreeSet<String> = toks.iter().map(|t| format!("u={t}")).collect();
    for w in toks.windows(2) {
        f.insert(format!("b={} {}", w[0], w[1]));
    }
    let mut out = vec![BIAS.to_string()];
    out.extend(f);
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassWeights {
    pub threshold: f64,
    pub weights: BTreeMap<String, f64>,
}

impl ClassWeights {
    pub fn score(&self, features: &[String]) -> f64 {
        features.iter().filter_map(|f| self.weights.get(f)).sum()
    }

    pub fn bias(&self) -> f64 {
        self.weights.get(BIAS).copied().unwrap_or(0.0)
    }

    pub fn set_bias(&mut self, w: f64) {
        self.weights.insert(BIAS.to_string(), w);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnModel {
    pub version: u32,
    pub merge: MergeMode,
    pub epochs: usize,
    pub seed: u64,
    pub classes: BTreeMap<TurnClass, ClassWeights>,
}

impl TurnModel {
    /// A model with no weights; with the default threshold of 0 it assigns
    /// every class to every turn.
    pub fn zero(merge: MergeMode) -> Self {
        TurnModel {
            version: TURN_MODEL_VERSION,
            merge,
            epochs: 0,
            seed: 0,
            classes: TurnClass::ALL
                .into_iter()
                .map(|c| (c, ClassWeights::default()))
                .collect(),
        }
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        for w in self.classes.values_mut() {
            w.threshold = threshold;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TurnModel = serde_json::from_str(text)?;
        if model.version != TURN_MODEL_VERSION {
            return Err(Error::ModelVersion(model.version));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Per-turn classes implied by span annotations of one conversation: a
/// class is present iff a span of that kind lies in the turn.
pub fn project_turn_classes<'a>(
    annotations: impl IntoIterator<Item = &'a AnnotationSet>,
    turn_count: usize,
) -> Vec<TurnClasses> {
    let mut out = vec![TurnClasses::new(); turn_count];
    for ann in annotations {
        for span in &ann.spans {
            if let (Some(c), Some(slot)) = (TurnClass::of_tag(&span.tag), out.get_mut(span.turn_index)) {
                slot.insert(c);
            }
        }
    }
    out
}

/// Gold turn classes per conversation, keeping annotations the merge mode
/// admits.
pub fn gold_turn_classes(
    gold: &[AnnotationSet],
    corpus: &Corpus,
    merge: MergeMode,
) -> Result<BTreeMap<String, Vec<TurnClasses>>> {
    let mut by_conv: BTreeMap<&str, Vec<&AnnotationSet>> = BTreeMap::new();
    for ann in gold.iter().filter(|a| merge.admits(a.task)) {
        by_conv.entry(ann.conversation_id.as_str()).or_default().push(ann);
    }
    by_conv
        .into_iter()
        .map(|(id, anns)| {
            let conv = corpus.require(id)?;
            Ok((id.to_string(), project_turn_classes(anns, conv.turns.len())))
        })
        .collect()
}

/// One-vs-rest averaged perceptron per class.
pub fn train_turns(
    gold: &[AnnotationSet],
    corpus: &Corpus,
    epochs: usize,
    seed: u64,
    merge: MergeMode,
) -> Result<TurnModel> {
    if epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let labels = gold_turn_classes(gold, corpus, merge)?;
    let mut examples: Vec<(Vec<usize>, &TurnClasses)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    for (id, classes) in &labels {
        let conv = corpus.require(id)?;
        for (turn, cls) in conv.turns.iter().zip(classes) {
            let feats = turn_features(turn)
                .into_iter()
                .map(|f| {
                    *index.entry(f.clone()).or_insert_with(|| {
                        names.push(f);
                        names.len() - 1
                    })
                })
                .collect();
            examples.push((feats, cls));
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let mut model = TurnModel::zero(merge);
    model.epochs = epochs;
    model.seed = seed;
    let dim = names.len();
    for class in TurnClass::ALL {
        let mut w = vec![0.0; dim];
        let mut u = vec![0.0; dim];
        let mut c = 1.0;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                let (feats, cls) = &examples[k];
                let score: f64 = feats.iter().map(|&f| w[f]).sum();
                let gold = cls.contains(&class);
                if (score >= 0.0) != gold {
                    let delta = if gold { 1.0 } else { -1.0 };
                    for &f in feats {
                        w[f] += delta;
                        u[f] += c * delta;
                    }
                }
                c += 1.0;
            }
        }
        let weights = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), w[i] - u[i] / c))
            .filter(|(_, v)| *v != 0.0)
            .collect();
        model.classes.insert(
            class,
            ClassWeights {
                threshold: 0.0,
                weights,
            },
        );
    }
    Ok(model)
}

/// Class `c` is assigned iff its score reaches the class threshold.
pub fn predict_turns(model: &TurnModel, conversation: &Conversation) -> Vec<TurnClasses> {
    conversation
        .turns
        .iter()
        .map(|turn| {
            let feats = turn_features(turn);
            model
                .classes
                .iter()
                .filter(|(_, w)| w.score(&feats) >= w.threshold)
                .map(|(&c, _)| c)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEval {
    pub per_class: BTreeMap<TurnClass, LabelScore>,
}

/// Turn-level P/R/F1 per class. Conversations absent from `predicted`
/// count as predicting nothing.
pub fn eval_turns(
    predicted: &BTreeMap<String, Vec<TurnClasses>>,
    gold: &BTreeMap<String, Vec<TurnClasses>>,
) -> Result<TurnEval> {
    let mut tp: BTreeMap<TurnClass, usize> = BTreeMap::new();
    let mut n: BTreeMap<TurnClass, usize> = BTreeMap::new();
    let mut m: BTreeMap<TurnClass, usize> = BTreeMap::new();
    let empty = Vec::new();
    for (id, g) in gold {
        let p = predicted.get(id).unwrap_or(&empty);
        if !p.is_empty() && p.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "conversation {id}: {} predicted turns, {} gold turns",
                p.len(),
                g.len()
            )));
        }
        for (t, gs) in g.iter().enumerate() {
            let ps = p.get(t);
            for &c in gs {
                *n.entry(c).or_default() += 1;
                if ps.is_some_and(|s| s.contains(&c)) {
                    *tp.entry(c).or_default() += 1;
                }
            }
            for &c in ps.into_iter().flatten() {
                *m.entry(c).or_default() += 1;
            }
        }
    }
    for (id, p) in predicted {
        if !gold.contains_key(id) {
            for &c in p.iter().flatten() {
                *m.entry(c).or_default() += 1;
            }
        }
    }
    let get = |map: &BTreeMap<TurnClass, usize>, c| map.get(&c).copied().unwrap_or(0);
    let per_class = TurnClass::ALL
        .into_iter()
        .map(|c| {
            let hits = get(&tp, c) as f64;
            (c, LabelScore::from_means(hits, get(&n, c), hits, get(&m, c)))
        })
        .collect();
    Ok(TurnEval { per_class })
}

/// Rows of `task,class,model,precision,recall,f1`.
pub fn turn_eval_csv(rows: &[(&str, &str, &TurnEval)]) -> String {
    let mut out = String::from("task,class,model,precision,recall,f1\n");
    for (task, model, eval) in rows {
        for (class, s) in &eval.per_class {
            out.push_str(&format!(
                "{task},{class},{model},{:.4},{:.4},{:.4}\n",
                s.precision, s.recall, s.f1
            ));
        }
    }
    out
}
