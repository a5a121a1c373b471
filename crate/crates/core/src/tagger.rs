//! Linear-chain tagger: averaged structured perceptron with exact Viterbi
//! decoding under BIO constraints.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bio::{decode_bio, encode_bio, TokenLabel};
use crate::corpus::{AnnotationSet, Conversation, Corpus, Task, Turn};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, TagKind};

pub const MODEL_LABELER: &str = "MODEL";
pub const MODEL_VERSION: u32 = 1;
const START: &str = "<START>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanFilter {
    #[default]
    All,
    EntitiesOnly,
    AttributesOnly,
}

impl SpanFilter {
    fn keeps(self, kind: TagKind) -> bool {
        match self {
            SpanFilter::All => true,
            SpanFilter::EntitiesOnly => kind == TagKind::Entity,
            SpanFilter::AttributesOnly => kind == TagKind::Attribute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub filter: SpanFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            seed: 0,
            filter: SpanFilter::All,
        }
    }
}

/// Per-token feature strings.
pub fn token_features(turn: &Turn, i: usize) -> Vec<String> {
    let tok = turn.tokens[i].to_lowercase();
    let chars: Vec<char> = tok.chars().collect();
    let mut f = Vec::with_capacity(12);
    f.push(format!("w={tok}"));
    for k in 1..=chars.len().min(3) {
        f.push(format!("p{k}={}", chars[..k].iter().collect::<String>()));
        f.push(format!("s{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
    }
    let prev = if i == 0 {
        "<BOS>".to_string()
    } else {
        turn.tokens[i - 1].to_lowercase()
    };
    let next = turn
        .tokens
        .get(i + 1)
        .map(|t| t.to_lowercase())
        .unwrap_or_else(|| "<EOS>".to_string());
    f.push(format!("prev={prev}"));
    f.push(format!("next={next}"));
    f.push(format!("spk={}", turn.speaker.as_str()));
    if tok.chars().any(|c| c.is_ascii_digit()) {
        f.push("digit".to_string());
    }
    f
}

/// Sort key putting `O` first, then labels by their string form.
pub fn label_order(a: &TokenLabel, b: &TokenLabel) -> Ordering {
    (!a.is_outside(), a.to_string()).cmp(&(!b.is_outside(), b.to_string()))
}

/// BIO constraint: `x_I` only after `x_B` or `x_I`.
pub fn transition_allowed(prev: Option<&TokenLabel>, cur: &TokenLabel) -> bool {
    match cur {
        TokenLabel::Inside(tag) => prev.is_some_and(|p| !p.is_outside() && p.tag() == Some(tag)),
        _ => true,
    }
}

/// Scores for one decoding problem. `transition` is `L × L`, row = previous
/// label; `emission` is `n × L`.
pub struct Lattice<'a> {
    pub labels: &'a [TokenLabel],
    pub start: &'a [f64],
    pub transition: &'a [f64],
    pub emission: &'a [f64],
}

impl Lattice<'_> {
    pub fn len(&self) -> usize {
        self.emission.len() / self.labels.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of a full path, or `None` if it breaks the BIO constraint.
    pub fn path_score(&self, path: &[usize]) -> Option<f64> {
        let l = self.labels.len();
        let mut score = 0.0;
        let mut prev: Option<usize> = None;
        for (t, &y) in path.iter().enumerate() {
            if !transition_allowed(prev.map(|p| &self.labels[p]), &self.labels[y]) {
                return None;
            }
            score += match prev {
                None => self.start[y],
                Some(p) => self.transition[p * l + y],
            };
            score += self.emission[t * l + y];
            prev = Some(y);
        }
        Some(score)
    }
}

/// Exact argmax over label paths. Among equal-scoring paths the one whose
/// index sequence is lexicographically smallest wins, so with labels in
/// [`label_order`] ties go toward `O` and then the smaller label.
pub fn viterbi(lattice: &Lattice) -> Vec<usize> {
    let l = lattice.labels.len();
    let n = lattice.len();
    if n == 0 || l == 0 {
        return Vec::new();
    }
    let allowed: Vec<bool> = (0..l * l)
        .map(|k| transition_allowed(Some(&lattice.labels[k / l]), &lattice.labels[k % l]))
        .collect();
    // suffix[t][y]: best score of positions t.. given label y at t
    let mut suffix = vec![f64::NEG_INFINITY; n * l];
    suffix[(n - 1) * l..].copy_from_slice(&lattice.emission[(n - 1) * l..]);
    for t in (0..n - 1).rev() {
        for y in 0..l {
            let mut best = f64::NEG_INFINITY;
            for z in 0..l {
                if allowed[y * l + z] {
                    let s = lattice.transition[y * l + z] + suffix[(t + 1) * l + z];
                    if s > best {
                        best = s;
                    }
                }
            }
            suffix[t * l + y] = lattice.emission[t * l + y] + best;
        }
    }
    let pick = |scores: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut best: Option<(usize, f64)> = None;
        for (y, s) in scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((y, s));
            }
        }
        best.map(|(y, _)| y).unwrap_or(0)
    };
    let mut path = Vec::with_capacity(n);
    let first = pick(
        &mut (0..l)
            .filter(|&y| transition_allowed(None, &lattice.labels[y]))
            .map(|y| (y, lattice.start[y] + suffix[y])),
    );
    path.push(first);
    for t in 1..n {
        let p = path[t - 1];
        let next = pick(
            &mut (0..l)
                .filter(|&y| allowed[p * l + y])
                .map(|y| (y, lattice.transition[p * l + y] + suffix[t * l + y])),
        );
        path.push(next);
    }
    path
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub epochs: usize,
    pub seed: u64,
    pub filter: SpanFilter,
    pub instances: usize,
    pub updates: u64,
}

/// Trained tagger. Weights are dense over interned features; the on-disk
/// form is a sorted JSON map holding only nonzero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub task: Task,
    pub labels: Vec<TokenLabel>,
    features: HashMap<String, usize>,
    emission: Vec<f64>,
    start: Vec<f64>,
    transition: Vec<f64>,
    pub info: TrainingInfo,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    task: Task,
    labels: Vec<String>,
    info: TrainingInfo,
    transitions: BTreeMap<String, BTreeMap<String, f64>>,
    weights: BTreeMap<String, BTreeMap<String, f64>>,
}

fn sparse_row(labels: &[String], row: &[f64]) -> BTreeMap<String, f64> {
    labels
        .iter()
        .zip(row)
        .filter(|(_, &w)| w != 0.0)
        .map(|(l, &w)| (l.clone(), w))
        .collect()
}

impl TaggerModel {
    fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    /// Emission scores for one turn, `n × L`.
    fn emissions(&self, turn: &Turn) -> Vec<f64> {
        let l = self.label_count();
        let mut out = vec![0.0; turn.tokens.len() * l];
        for i in 0..turn.tokens.len() {
            let row = &mut out[i * l..(i + 1) * l];
            for f in token_features(turn, i) {
                if let Some(&fi) = self.features.get(&f) {
                    for (r, w) in row.iter_mut().zip(&self.emission[fi * l..(fi + 1) * l]) {
                        *r += w;
                    }
                }
            }
        }
        out
    }

    pub fn decode_turn(&self, turn: &Turn) -> Vec<TokenLabel> {
        let emission = self.emissions(turn);
        let lattice = Lattice {
            labels: &self.labels,
            start: &self.start,
            transition: &self.transition,
            emission: &emission,
        };
        viterbi(&lattice).into_iter().map(|y| self.labels[y].clone()).collect()
    }

    pub fn weight(&self, feature: &str, label: &TokenLabel) -> f64 {
        let Some(y) = self.labels.iter().position(|l| l == label) else {
            return 0.0;
        };
        self.features
            .get(feature)
            .map_or(0.0, |&fi| self.emission[fi * self.label_count() + y])
    }

    pub fn to_json(&self) -> Result<String> {
        let names: Vec<String> = self.labels.iter().map(ToString::to_string).collect();
        let l = names.len();
        let mut transitions = BTreeMap::new();
        let start = sparse_row(&names, &self.start);
        if !start.is_empty() {
            transitions.insert(START.to_string(), start);
        }
        for (p, name) in names.iter().enumerate() {
            let row = sparse_row(&names, &self.transition[p * l..(p + 1) * l]);
            if !row.is_empty() {
                transitions.insert(name.clone(), row);
            }
        }
        let mut weights = BTreeMap::new();
        for (f, &fi) in &self.features {
            let row = sparse_row(&names, &self.emission[fi * l..(fi + 1) * l]);
            if !row.is_empty() {
                weights.insert(f.clone(), row);
            }
        }
        let file = ModelFile {
            version: MODEL_VERSION,
            task: self.task,
            labels: names,
            info: self.info.clone(),
            transitions,
            weights,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::ModelVersion(file.version));
        }
        let labels = file
            .labels
            .iter()
            .map(|s| s.parse::<TokenLabel>())
            .collect::<Result<Vec<_>>>()?;
        let l = labels.len();
        let index: HashMap<&str, usize> = file.labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let label_at = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("model references unknown label {name:?}")))
        };
        let mut start = vec![0.0; l];
        let mut transition = vec![0.0; l * l];
        for (prev, row) in &file.transitions {
            for (cur, &w) in row {
                let y = label_at(cur)?;
                if prev == START {
                    start[y] = w;
                } else {
                    transition[label_at(prev)? * l + y] = w;
                }
            }
        }
        let mut features = HashMap::with_capacity(file.weights.len());
        let mut emission = vec![0.0; file.weights.len() * l];
        for (fi, (f, row)) in file.weights.iter().enumerate() {
            features.insert(f.clone(), fi);
            for (cur, &w) in row {
                emission[fi * l + label_at(cur)?] = w;
            }
        }
        if emission.iter().chain(&start).chain(&transition).any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("model contains non-finite weights".into()));
        }
        Ok(TaggerModel {
            task: file.task,
            labels,
            features,
            emission,
            start,
            transition,
            info: file.info,
        })
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

struct Instance {
    gold: Vec<usize>,
    features: Vec<Vec<usize>>,
}

/// Current weights `w` plus the running sum `u` of `c·Δ`; the average after
/// `c` steps is `w - u / c`.
struct Averaged {
    w: Vec<f64>,
    u: Vec<f64>,
}

impl Averaged {
    fn new(n: usize) -> Self {
        Averaged {
            w: vec![0.0; n],
            u: vec![0.0; n],
        }
    }

    fn add(&mut self, i: usize, delta: f64, c: f64) {
        self.w[i] += delta;
        self.u[i] += c * delta;
    }

    fn average(&self, c: f64) -> Vec<f64> {
        self.w.iter().zip(&self.u).map(|(w, u)| w - u / c).collect()
    }
}

/// Train on the gold annotations of `ontology.task`. Spans with tags the
/// ontology does not know are ignored, as are spans the filter rejects.
pub fn train(
    gold: &[AnnotationSet],
    corpus: &Corpus,
    ontology: &Ontology,
    config: &TrainConfig,
) -> Result<TaggerModel> {
    if config.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let task = ontology.task;
    let mut sequences = Vec::new();
    for ann in gold.iter().filter(|a| a.task == task) {
        let conv = corpus.require(&ann.conversation_id)?;
        let spans: Vec<_> = ann
            .spans
            .iter()
            .filter(|s| ontology.kind_of(&s.tag).is_some_and(|k| config.filter.keeps(k)))
            .cloned()
            .collect();
        let labels = encode_bio(&spans, &conv.turn_lengths(), true).map_err(|e| match e {
            Error::SpanOutOfRange { span_id, .. } => Error::SpanOutOfRange {
                conversation_id: conv.id.clone(),
                span_id,
            },
            other => other,
        })?;
        for (turn, seq) in conv.turns.iter().zip(labels) {
            if !turn.tokens.is_empty() {
                sequences.push((turn, seq));
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let mut labels: Vec<TokenLabel> = vec![TokenLabel::Outside];
    for (_, seq) in &sequences {
        labels.extend(seq.iter().filter(|l| !l.is_outside()).cloned());
    }
    // every tag gets both B and I so decoding can express any span length
    let tags: Vec<String> = labels.iter().filter_map(|l| l.tag().map(str::to_string)).collect();
    for tag in tags {
        labels.push(TokenLabel::begin(tag.clone()));
        labels.push(TokenLabel::inside(tag));
    }
    labels.sort_by(label_order);
    labels.dedup();
    let l = labels.len();
    let label_index: HashMap<&TokenLabel, usize> = labels.iter().enumerate().map(|(i, x)| (x, i)).collect();

    let mut features: HashMap<String, usize> = HashMap::new();
    let mut instances: Vec<Instance> = Vec::with_capacity(sequences.len());
    for (turn, seq) in &sequences {
        let feats = (0..turn.tokens.len())
            .map(|i| {
                token_features(turn, i)
                    .into_iter()
                    .map(|f| {
                        let next = features.len();
                        *features.entry(f).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        instances.push(Instance {
            gold: seq.iter().map(|x| label_index[x]).collect(),
            features: feats,
        });
    }

    let mut emission = Averaged::new(features.len() * l);
    let mut start = Averaged::new(l);
    let mut transition = Averaged::new(l * l);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut c = 1.0;
    let mut updates = 0u64;
    let mut scratch = Vec::new();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let inst = &instances[k];
            let n = inst.gold.len();
            scratch.clear();
            scratch.resize(n * l, 0.0);
            for (t, feats) in inst.features.iter().enumerate() {
                let row = &mut scratch[t * l..(t + 1) * l];
                for &fi in feats {
                    for (r, w) in row.iter_mut().zip(&emission.w[fi * l..(fi + 1) * l]) {
                        *r += w;
                    }
                }
            }
            let lattice = Lattice {
                labels: &labels,
                start: &start.w,
                transition: &transition.w,
                emission: &scratch,
            };
            let pred = viterbi(&lattice);
            if pred != inst.gold {
                updates += 1;
                for (path, delta) in [(&inst.gold, 1.0), (&pred, -1.0)] {
                    for t in 0..n {
                        let y = path[t];
                        for &fi in &inst.features[t] {
                            emission.add(fi * l + y, delta, c);
                        }
                        if t == 0 {
                            start.add(y, delta, c);
                        } else {
                            transition.add(path[t - 1] * l + y, delta, c);
                        }
                    }
                }
            }
            c += 1.0;
        }
    }

    Ok(TaggerModel {
        task,
        labels,
        features,
        emission: emission.average(c),
        start: start.average(c),
        transition: transition.average(c),
        info: TrainingInfo {
            epochs: config.epochs,
            seed: config.seed,
            filter: config.filter,
            instances: order.len(),
            updates,
        },
    })
}

/// Tag every turn of a conversation.
pub fn predict(model: &TaggerModel, conversation: &Conversation) -> AnnotationSet {
    let seqs: Vec<Vec<TokenLabel>> = conversation.turns.iter().map(|t| model.decode_turn(t)).collect();
    let mut ann = AnnotationSet::new(conversation.id.clone(), MODEL_LABELER, model.task);
    ann.spans = decode_bio(&seqs, true);
    ann
}
