//! Synthetic conversations with gold annotations, and a noisy-labeler
//! simulator.
//!
//! Conversations are stitched together from scene templates. A template is
//! one line per turn, `DR: ...` or `PT: ...`, with inline markup:
//!
//! * `[2 weeks]{Property:Duration>e}`: literal words labeled with a tag
//!   and linked to the span named `e`;
//! * `[queasy]{GI:Nausea|Experienced@e}`: a span with a status, named `e`;
//! * `{$SYMPTOM|Experienced@e}`: a slot filled from the slot vocabulary,
//!   labeled with the tag the vocabulary gives;
//! * `{$CONDITION=Condition:Patient|Experienced}`: a slot whose tag is set
//!   by the template;
//! * `{$RELATIVE}`: a slot of plain words.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, Conversation, Corpus, LabeledSpan, Speaker, SplitManifest, Task, Turn};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, TagKind};
use crate::suggest::Lexicon;

pub const GOLD_LABELER: &str = "GOLD";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub miss_rate: f64,
    /// Largest shift of each span edge, in tokens.
    pub boundary_jitter: usize,
    pub tag_confusion: f64,
    pub status_flip: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            miss_rate: 0.1,
            boundary_jitter: 1,
            tag_confusion: 0.05,
            status_flip: 0.02,
        }
    }
}

impl Noise {
    pub const NONE: Noise = Noise {
        miss_rate: 0.0,
        boundary_jitter: 0,
        tag_confusion: 0.0,
        status_flip: 0.0,
    };

    pub fn check(&self) -> Result<()> {
        for (name, p) in [
            ("miss_rate", self.miss_rate),
            ("tag_confusion", self.tag_confusion),
            ("status_flip", self.status_flip),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Turns, spans and (child, anchor) relation pairs.
pub type Realized = (Vec<Turn>, Vec<LabeledSpan>, Vec<(String, String)>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub name: String,
    pub task: Task,
    pub turns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub split: SplitSizes,
    /// Target turn count range; a single scene longer than the target is
    /// still kept whole.
    pub turns: (usize, usize),
    pub providers_per_split: usize,
    pub filler_rate: f64,
    pub scenes: Vec<SceneTemplate>,
    pub noise: Noise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            split: SplitSizes {
                train: 160,
                dev: 20,
                test: 20,
            },
            turns: (12, 24),
            providers_per_split: 4,
            filler_rate: 0.3,
            scenes: default_scenes(),
            noise: Noise::default(),
        }
    }
}

impl SynthConfig {
    pub fn n_conversations(&self) -> usize {
        self.split.total()
    }

    pub fn check(&self) -> Result<()> {
        self.noise.check()?;
        if self.turns.0 > self.turns.1 {
            return Err(Error::InvalidConfig(format!("turn range {:?} is empty", self.turns)));
        }
        if !(0.0..=1.0).contains(&self.filler_rate) {
            return Err(Error::InvalidConfig(format!(
                "filler_rate = {} outside [0, 1]",
                self.filler_rate
            )));
        }
        if self.scenes.is_empty() {
            return Err(Error::InvalidConfig("no scene templates".into()));
        }
        if self.providers_per_split == 0 {
            return Err(Error::InvalidConfig("providers_per_split must be at least 1".into()));
        }
        Ok(())
    }
}

fn scene(name: &str, task: Task, turns: &[&str]) -> SceneTemplate {
    SceneTemplate {
        name: name.to_string(),
        task,
        turns: turns.iter().map(|t| t.to_string()).collect(),
    }
}

/// The stomach-issues exchange, labeled as in the worked example.
pub fn stomach_issues_scene() -> SceneTemplate {
    scene(
        "stomach-issues",
        Task::Symptoms,
        &[
            "PT: I 've been having [stomach issues]{GI:Other|Experienced@e1} around here for the last [2 weeks]{Property:Duration>e1} . It 's [bad]{Property:Severity/Amount>e1} .",
            "DR: Okay , in the [upper abdomen]{Property:Location>e1} . What does it feel like ?",
            "PT: It kind of [comes and goes]{Property:Frequency>e2} and [hurts]{GI:Abdominal Pain|Experienced@e2} . [Sometimes]{Property:Frequency>e3} I feel [queasy]{GI:Nausea|Experienced@e3} .",
        ],
    )
}

pub fn default_scenes() -> Vec<SceneTemplate> {
    use Task::*;
    vec![
        stomach_issues_scene(),
        scene("chief-complaint", Symptoms, &[
            "DR: What brings you in today ?",
            "PT: I 've had {$SYMPTOM|Experienced@e} for {$DURATION>e} .",
        ]),
        scene("how-often", Symptoms, &[
            "DR: How often does that happen ?",
            "PT: The {$SYMPTOM|Experienced@e} happens {$FREQUENCY>e} .",
        ]),
        scene("where-how-bad", Symptoms, &[
            "PT: My {$SYMPTOM|Experienced@e} is {$SEVERITY>e} , mostly in the {$LOCATION>e} .",
        ]),
        scene("relief", Symptoms, &[
            "PT: I keep getting {$SYMPTOM|Experienced@e} .",
            "DR: Does anything help ?",
            "PT: It gets better with {$FACTOR=Property:Alleviating Factor>e} .",
        ]),
        scene("trigger", Symptoms, &[
            "PT: The {$SYMPTOM|Experienced@e} gets worse with {$FACTOR=Property:Provoking Factor>e} .",
        ]),
        scene("denial", Symptoms, &[
            "DR: Anything else bothering you ?",
            "PT: No , I have n't had any {$SYMPTOM|Not Experienced} .",
        ]),
        scene("mixed", Symptoms, &[
            "PT: No {$SYMPTOM|Not Experienced} , but I do get {$SYMPTOM|Experienced@e} {$FREQUENCY>e} .",
        ]),
        scene("diabetes-meds", Medications, &[
            "DR: Are you taking any [diabetes medication]{Drug@d1} ?",
            "PT: My kidney doc just changed the [pill]{Property:Mode>d1} .",
            "DR: Oh , a [Sulfonylurea]{Drug@d2} . Like [Amaryl]{Drug@d3} ? The generic name is [glimepiride]{Drug@d4} .",
            "PT: Yup , she started me on [1mg]{Property:Dose>d4} [everyday]{Property:Frequency>d4} .",
            "DR: Do you use [Insulin]{Drug@d5} ?",
            "PT: [The shot]{Property:Mode>d5} ? Only my brother has to .",
        ]),
        scene("regimen", Medications, &[
            "PT: I take {$DRUG@d} {$DOSE>d} {$DRUG_FREQUENCY>d} .",
        ]),
        scene("route", Medications, &[
            "DR: How do you take the {$DRUG@d} ?",
            "PT: It 's a {$MODE>d} , {$DRUG_FREQUENCY>d} .",
        ]),
        scene("how-long", Medications, &[
            "DR: How long have you been on {$DRUG@d} ?",
            "PT: For about {$DURATION>d} .",
        ]),
        scene("supply", Medications, &[
            "PT: They gave me a {$QUANTITY>d} of {$DRUG@d} .",
        ]),
        scene("new-prescription", Medications, &[
            "DR: I 'm going to start you on {$DRUG@d} {$DOSE>d} .",
            "PT: Okay , sounds good .",
        ]),
        scene("diabetes-history", Conditions, &[
            "DR: Any history of [diabetes]{Condition:Patient|Experienced@c1} ?",
            "PT: I have [diabetes]{Condition:Patient|Experienced@c2} .",
            "DR: When was that diagnosed ?",
            "PT: [10 years ago]{Property:Onset/Diagnosis>c2} .",
            "DR: OK , and it seems to be [well-controlled]{Property:Severity/Amount>c2} . Any history of [high blood pressure]{Condition:Family History|Experienced@c3} in the family ?",
            "PT: My brother has [early onset]{Property:Onset/Diagnosis>c4} [high blood pressure]{Condition:Family History|Experienced@c4} .",
        ]),
        scene("diagnosed", Conditions, &[
            "PT: I was diagnosed with {$CONDITION=Condition:Patient|Experienced@c} {$ONSET>c} .",
        ]),
        scene("no-history", Conditions, &[
            "PT: I do n't have {$CONDITION=Condition:Patient|Not Experienced} .",
        ]),
        scene("family", Conditions, &[
            "PT: My {$RELATIVE} has {$CONDITION=Condition:Family History|Experienced} .",
        ]),
        scene("control", Conditions, &[
            "PT: My {$CONDITION=Condition:Patient|Experienced@c} is {$CONTROL>c} .",
        ]),
        scene("long-standing", Conditions, &[
            "PT: I 've had {$CONDITION=Condition:Patient|Experienced@c} for {$DURATION>c} .",
        ]),
        scene("family-denial", Conditions, &[
            "DR: Anyone in the family with {$CONDITION=Condition:Family History|Not Experienced} ?",
            "PT: Not that I know of .",
        ]),
    ]
}

const FILLER: &[&str] = &[
    "DR: How are you doing today ?",
    "PT: Pretty good , thanks .",
    "DR: Let me take a look .",
    "PT: Okay .",
    "DR: Any questions for me ?",
    "PT: I think that 's it .",
    "DR: Let 's check your blood pressure .",
    "PT: Sure .",
    "DR: I 'll see you in a few weeks .",
    "PT: Thank you , doctor .",
    "DR: Can you tell me more ?",
    "PT: I 'm not sure what else to say .",
];

/// Slot name to (surface, tag) choices.
pub type SlotVocabulary = BTreeMap<String, Vec<(String, Option<String>)>>;

fn tagged(tag: &str, words: &[&str]) -> Vec<(String, Option<String>)> {
    words.iter().map(|w| (w.to_string(), Some(tag.to_string()))).collect()
}

fn plain(words: &[&str]) -> Vec<(String, Option<String>)> {
    words.iter().map(|w| (w.to_string(), None)).collect()
}

pub fn default_vocabulary() -> SlotVocabulary {
    let symptoms = Ontology::default_for(Task::Symptoms);
    let mut v = SlotVocabulary::new();
    v.insert(
        "SYMPTOM".into(),
        symptoms
            .entities
            .iter()
            .flat_map(|e| e.aliases.iter().map(|a| (a.clone(), Some(e.tag.clone()))))
            .collect(),
    );
    v.insert(
        "DURATION".into(),
        tagged(
            "Property:Duration",
            &[
                "2 weeks",
                "three days",
                "a month",
                "a few weeks",
                "about a year",
                "5 days",
            ],
        ),
    );
    v.insert(
        "FREQUENCY".into(),
        tagged(
            "Property:Frequency",
            &[
                "every day",
                "comes and goes",
                "sometimes",
                "twice a week",
                "all the time",
                "at night",
            ],
        ),
    );
    v.insert(
        "LOCATION".into(),
        tagged(
            "Property:Location",
            &[
                "upper abdomen",
                "lower back",
                "left side",
                "right knee",
                "chest",
                "neck",
            ],
        ),
    );
    v.insert(
        "SEVERITY".into(),
        tagged(
            "Property:Severity/Amount",
            &["bad", "mild", "really bad", "pretty severe", "a little", "terrible"],
        ),
    );
    v.insert(
        "FACTOR".into(),
        plain(&[
            "rest",
            "walking",
            "eating",
            "ice",
            "heat",
            "lying down",
            "exercise",
            "stretching",
        ]),
    );
    v.insert(
        "DRUG".into(),
        tagged(
            "Drug",
            &[
                "aspirin",
                "ibuprofen",
                "Tylenol",
                "metformin",
                "lisinopril",
                "insulin",
                "atorvastatin",
                "omeprazole",
                "the pain medication",
                "the pink pill",
            ],
        ),
    );
    v.insert(
        "DOSE".into(),
        tagged(
            "Property:Dose",
            &["1mg", "10 mg", "500 mg", "two tablets", "20mg", "81 mg"],
        ),
    );
    v.insert(
        "DRUG_FREQUENCY".into(),
        tagged(
            "Property:Frequency",
            &["everyday", "twice a day", "once a day", "at bedtime", "every morning"],
        ),
    );
    v.insert(
        "MODE".into(),
        tagged(
            "Property:Mode",
            &["pill", "shot", "inhaler", "injection", "cream", "patch"],
        ),
    );
    v.insert(
        "QUANTITY".into(),
        tagged(
            "Property:Quantity",
            &["90 day supply", "30 tablets", "bottle", "refill"],
        ),
    );
    v.insert(
        "CONDITION".into(),
        tagged(
            "Condition:Patient",
            &[
                "diabetes",
                "high blood pressure",
                "asthma",
                "heart disease",
                "high cholesterol",
                "arthritis",
                "kidney disease",
                "depression",
                "sleep apnea",
                "thyroid problems",
            ],
        ),
    );
    v.insert(
        "ONSET".into(),
        tagged(
            "Property:Onset/Diagnosis",
            &[
                "10 years ago",
                "last year",
                "in my twenties",
                "a few months ago",
                "as a kid",
            ],
        ),
    );
    v.insert(
        "CONTROL".into(),
        tagged(
            "Property:Severity/Amount",
            &["well-controlled", "under control", "pretty bad", "getting worse"],
        ),
    );
    v.insert(
        "RELATIVE".into(),
        plain(&["brother", "mother", "father", "sister", "grandmother"]),
    );
    v
}

/// Lexicon built from the tagged slot values of one task, for suggestion
/// experiments.
pub fn default_lexicon(task: Task) -> Lexicon {
    let slots: &[&str] = match task {
        Task::Symptoms => &["SYMPTOM"],
        Task::Medications => &["DRUG"],
        Task::Conditions => &["CONDITION"],
    };
    let vocab = default_vocabulary();
    let mut lex = Lexicon::default();
    for slot in slots {
        for (surface, tag) in &vocab[*slot] {
            if let Some(tag) = tag {
                // conflicting duplicates cannot occur in the built-in vocabulary
                let _ = lex.insert(surface, tag);
            }
        }
    }
    lex
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct SpanSpec {
    tag: Option<String>,
    status: Option<String>,
    name: Option<String>,
    anchor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Span { words: Vec<String>, spec: SpanSpec },
    Slot { slot: String, spec: SpanSpec },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TurnTemplate {
    speaker: Speaker,
    pieces: Vec<Piece>,
}

fn bad(template: &str, why: &str) -> Error {
    Error::InvalidTemplate(format!("{why}: {template:?}"))
}

fn parse_spec(raw: &str, template: &str) -> Result<SpanSpec> {
    let mut rest = raw;
    let mut spec = SpanSpec::default();
    if let Some((head, anchor)) = rest.rsplit_once('>') {
        spec.anchor = Some(anchor.trim().to_string());
        rest = head;
    }
    if let Some((head, name)) = rest.rsplit_once('@') {
        spec.name = Some(name.trim().to_string());
        rest = head;
    }
    if let Some((head, status)) = rest.split_once('|') {
        spec.status = Some(status.trim().to_string());
        rest = head;
    }
    let tag = rest.trim();
    if !tag.is_empty() {
        spec.tag = Some(tag.to_string());
    }
    for part in [&spec.anchor, &spec.name, &spec.status].into_iter().flatten() {
        if part.is_empty() {
            return Err(bad(template, "empty markup field"));
        }
    }
    Ok(spec)
}

fn parse_turn(line: &str) -> Result<TurnTemplate> {
    let (who, body) = line
        .split_once(':')
        .ok_or_else(|| bad(line, "missing speaker prefix"))?;
    let speaker: Speaker = who.trim().parse().map_err(|_| bad(line, "unknown speaker"))?;
    let mut pieces = Vec::new();
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    let take_until = |i: &mut usize, close: char| -> Result<String> {
        let start = *i;
        while *i < chars.len() && chars[*i] != close {
            *i += 1;
        }
        if *i == chars.len() {
            return Err(bad(line, &format!("unclosed markup, expected {close:?}")));
        }
        let s: String = chars[start..*i].iter().collect();
        *i += 1;
        Ok(s)
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '[' {
            i += 1;
            let text = take_until(&mut i, ']')?;
            if chars.get(i) != Some(&'{') {
                return Err(bad(line, "span text must be followed by {tag}"));
            }
            i += 1;
            let spec = parse_spec(&take_until(&mut i, '}')?, line)?;
            let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if words.is_empty() || spec.tag.is_none() {
                return Err(bad(line, "span needs words and a tag"));
            }
            pieces.push(Piece::Span { words, spec });
        } else if c == '{' {
            i += 1;
            let inner = take_until(&mut i, '}')?;
            let inner = inner
                .strip_prefix('$')
                .ok_or_else(|| bad(line, "slot must start with $"))?;
            let end = inner.find(['=', '|', '@', '>']).unwrap_or(inner.len());
            let slot = inner[..end].trim().to_string();
            let rest = inner[end..].strip_prefix('=').unwrap_or(&inner[end..]);
            if slot.is_empty() {
                return Err(bad(line, "empty slot name"));
            }
            pieces.push(Piece::Slot {
                slot,
                spec: parse_spec(rest, line)?,
            });
        } else if c == ']' || c == '}' {
            return Err(bad(line, "unbalanced markup"));
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '[' | '{' | ']' | '}') {
                i += 1;
            }
            pieces.push(Piece::Word(chars[start..i].iter().collect()));
        }
    }
    Ok(TurnTemplate { speaker, pieces })
}

/// A parsed, checked scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub task: Task,
    turns: Vec<TurnTemplate>,
}

impl Scene {
    pub fn parse(template: &SceneTemplate) -> Result<Scene> {
        let turns = template
            .turns
            .iter()
            .map(|t| parse_turn(t))
            .collect::<Result<Vec<_>>>()?;
        if turns.is_empty() {
            return Err(bad(&template.name, "scene has no turns"));
        }
        Ok(Scene {
            name: template.name.clone(),
            task: template.task,
            turns,
        })
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Realize the scene. Spans get ids `{prefix}{n}` and relations join
    /// each anchored span to its anchor.
    pub fn instantiate<R: Rng>(&self, rng: &mut R, vocab: &SlotVocabulary, id_prefix: &str) -> Result<Realized> {
        let mut turns = Vec::with_capacity(self.turns.len());
        let mut spans = Vec::new();
        let mut names: HashMap<&str, String> = HashMap::new();
        let mut pending: Vec<(String, &str)> = Vec::new();
        for (t, tt) in self.turns.iter().enumerate() {
            let mut tokens: Vec<String> = Vec::new();
            for piece in &tt.pieces {
                let (words, tag, spec): (Vec<String>, Option<String>, Option<&SpanSpec>) = match piece {
                    Piece::Word(w) => {
                        tokens.push(w.clone());
                        continue;
                    }
                    Piece::Span { words, spec } => (words.clone(), spec.tag.clone(), Some(spec)),
                    Piece::Slot { slot, spec } => {
                        let choices = vocab
                            .get(slot)
                            .filter(|c| !c.is_empty())
                            .ok_or_else(|| bad(&self.name, &format!("unknown slot ${slot}")))?;
                        let (surface, vtag) = choices.choose(rng).expect("non-empty");
                        let words = surface.split_whitespace().map(str::to_string).collect();
                        (words, spec.tag.clone().or_else(|| vtag.clone()), Some(spec))
                    }
                };
                let start = tokens.len();
                tokens.extend(words);
                let (Some(tag), Some(spec)) = (tag, spec) else {
                    continue;
                };
                let id = format!("{id_prefix}{}", spans.len() + 1);
                let mut span = LabeledSpan::new(id.clone(), t, start, tokens.len(), tag);
                span.status = spec.status.clone();
                if let Some(name) = &spec.name {
                    if names.insert(name.as_str(), id.clone()).is_some() {
                        return Err(bad(&self.name, &format!("span name {name:?} used twice")));
                    }
                }
                if let Some(anchor) = &spec.anchor {
                    pending.push((id, anchor.as_str()));
                }
                spans.push(span);
            }
            turns.push(Turn::new(tt.speaker, tokens));
        }
        let mut relations = Vec::with_capacity(pending.len());
        for (id, anchor) in pending {
            let target = names
                .get(anchor)
                .ok_or_else(|| bad(&self.name, &format!("unknown anchor {anchor:?}")))?;
            relations.push((target.clone(), id));
        }
        Ok((turns, spans, relations))
    }
}

/// Per-stream generator so conversations can be built independently.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn conversation_id(index: usize) -> String {
    format!("conv{index:05}")
}

/// Build conversation `index` and its three gold annotation sets.
pub fn generate_conversation(
    config: &SynthConfig,
    scenes: &[Scene],
    vocab: &SlotVocabulary,
    index: usize,
) -> Result<(Conversation, Vec<AnnotationSet>)> {
    let mut rng = stream_rng(config.seed, index as u64 + 1);
    let id = conversation_id(index);
    let target = rng.gen_range(config.turns.0..=config.turns.1);
    let fillers: Vec<TurnTemplate> = FILLER.iter().map(|f| parse_turn(f)).collect::<Result<_>>()?;
    let mut turns: Vec<Turn> = Vec::new();
    let mut gold: BTreeMap<Task, AnnotationSet> = Task::ALL
        .iter()
        .map(|&t| (t, AnnotationSet::new(id.clone(), GOLD_LABELER, t)))
        .collect();
    let mut counter = 0usize;
    loop {
        let s = &scenes[rng.gen_range(0..scenes.len())];
        if !turns.is_empty() && turns.len() + s.len() > target {
            break;
        }
        if !turns.is_empty() && rng.gen_bool(config.filler_rate) {
            let f = &fillers[rng.gen_range(0..fillers.len())];
            turns.push(Turn::new(f.speaker, words_of(f)));
        }
        counter += 1;
        let prefix = format!("{}{counter}_", &s.task.as_str()[..1]);
        let (new_turns, spans, relations) = s.instantiate(&mut rng, vocab, &prefix)?;
        let offset = turns.len();
        let ann = gold.get_mut(&s.task).expect("all tasks present");
        ann.spans.extend(spans.into_iter().map(|mut sp| {
            sp.turn_index += offset;
            sp
        }));
        ann.relations.extend(relations);
        turns.extend(new_turns);
    }
    while turns.len() < target {
        let f = &fillers[rng.gen_range(0..fillers.len())];
        turns.push(Turn::new(f.speaker, words_of(f)));
    }
    Ok((Conversation { id, turns }, gold.into_values().collect()))
}

fn words_of(t: &TurnTemplate) -> Vec<String> {
    t.pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Word(w) => Some(w.clone()),
            _ => None,
        })
        .collect()
}

/// Check every tag a scene can produce against the task ontology.
fn check_scene_tags(scene: &Scene, vocab: &SlotVocabulary, ontologies: &BTreeMap<Task, Ontology>) -> Result<()> {
    let ont = &ontologies[&scene.task];
    for turn in &scene.turns {
        for piece in &turn.pieces {
            let (tags, spec): (Vec<Option<String>>, &SpanSpec) = match piece {
                Piece::Word(_) => continue,
                Piece::Span { spec, .. } => (vec![spec.tag.clone()], spec),
                Piece::Slot { slot, spec } => {
                    let choices = vocab
                        .get(slot)
                        .ok_or_else(|| bad(&scene.name, &format!("unknown slot ${slot}")))?;
                    (
                        choices
                            .iter()
                            .map(|(_, t)| spec.tag.clone().or_else(|| t.clone()))
                            .collect(),
                        spec,
                    )
                }
            };
            for tag in tags.into_iter().flatten() {
                match ont.kind_of(&tag) {
                    None => {
                        return Err(bad(
                            &scene.name,
                            &format!("tag {tag:?} not in the {} ontology", scene.task),
                        ))
                    }
                    Some(TagKind::Entity) if ont.status_required && spec.status.is_none() => {
                        return Err(bad(&scene.name, &format!("entity {tag:?} needs a status")))
                    }
                    Some(TagKind::Attribute) if spec.anchor.is_none() => {
                        return Err(bad(&scene.name, &format!("attribute {tag:?} needs an anchor")))
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

/// Generate conversations, gold annotations (three sets per conversation)
/// and a split manifest whose dev and test providers are disjoint.
pub fn generate_corpus(config: &SynthConfig) -> Result<(Corpus, Vec<AnnotationSet>, SplitManifest)> {
    config.check()?;
    let vocab = default_vocabulary();
    let ontologies: BTreeMap<Task, Ontology> = Task::ALL.iter().map(|&t| (t, Ontology::default_for(t))).collect();
    let scenes = config.scenes.iter().map(Scene::parse).collect::<Result<Vec<_>>>()?;
    for s in &scenes {
        check_scene_tags(s, &vocab, &ontologies)?;
    }
    let mut conversations = Vec::with_capacity(config.n_conversations());
    let mut gold = Vec::with_capacity(config.n_conversations() * 3);
    let mut split = SplitManifest::default();
    let mut provider_rng = stream_rng(config.seed, 0);
    for index in 0..config.n_conversations() {
        let (conv, anns) = generate_conversation(config, &scenes, &vocab, index)?;
        let (bucket, name) = if index < config.split.train {
            (&mut split.train, "train")
        } else if index < config.split.train + config.split.dev {
            (&mut split.dev, "dev")
        } else {
            (&mut split.test, "test")
        };
        bucket.push(conv.id.clone());
        let provider = format!("prov-{name}-{}", provider_rng.gen_range(0..config.providers_per_split));
        split.providers.insert(conv.id.clone(), provider);
        conversations.push(conv);
        gold.extend(anns);
    }
    Ok((Corpus::new(conversations)?, gold, split))
}

/// Deterministic 64-bit mix for deriving per-item seeds.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A noisy copy of `gold`. Each span independently may be dropped, have
/// each edge shifted by up to `boundary_jitter` tokens (kept inside the
/// turn, non-empty, and clear of neighbouring spans), have its entity tag
/// swapped for another of the same organ system, and have its status
/// flipped. Relations touching a dropped span are dropped.
pub fn simulate_labeler(
    gold: &AnnotationSet,
    turn_lengths: &[usize],
    ontology: &Ontology,
    noise: &Noise,
    labeler_id: &str,
    seed: u64,
) -> Result<AnnotationSet> {
    noise.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AnnotationSet::new(gold.conversation_id.clone(), labeler_id, gold.task);
    let mut order: Vec<&LabeledSpan> = gold.spans.iter().collect();
    order.sort_by_key(|s| (s.turn_index, s.start, s.end));
    let j = noise.boundary_jitter as i64;
    let mut last_end: Option<(usize, usize)> = None;
    for (k, span) in order.iter().enumerate() {
        let drop = rng.gen_bool(noise.miss_rate);
        let d_start = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
        let d_end = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
        let confuse = rng.gen_bool(noise.tag_confusion);
        let flip = rng.gen_bool(noise.status_flip);
        if drop {
            continue;
        }
        let len = turn_lengths
            .get(span.turn_index)
            .copied()
            .ok_or_else(|| Error::SpanOutOfRange {
                conversation_id: gold.conversation_id.clone(),
                span_id: span.span_id.clone(),
            })?;
        let lo = match last_end {
            Some((t, e)) if t == span.turn_index => e,
            _ => 0,
        };
        let hi = order
            .get(k + 1)
            .filter(|n| n.turn_index == span.turn_index)
            .map_or(len, |n| n.start);
        let lo = lo.min(span.start);
        let hi = hi.max(span.end);
        let start = (span.start as i64 + d_start).clamp(lo as i64, hi as i64 - 1) as usize;
        let end = (span.end as i64 + d_end).clamp(start as i64 + 1, hi as i64) as usize;
        let mut s = LabeledSpan::new(span.span_id.clone(), span.turn_index, start, end, span.tag.clone());
        s.status = span.status.clone();
        if confuse {
            if let Some(e) = ontology.entity(&span.tag) {
                let peers: Vec<&str> = ontology
                    .entities
                    .iter()
                    .filter(|o| o.tag != e.tag && o.system == e.system)
                    .map(|o| o.tag.as_str())
                    .collect();
                if let Some(t) = peers.choose(&mut rng) {
                    s.tag = t.to_string();
                }
            }
        }
        if flip {
            if let Some(st) = &s.status {
                let others: Vec<&String> = ontology.statuses.iter().filter(|o| *o != st).collect();
                if let Some(o) = others.choose(&mut rng) {
                    s.status = Some((*o).clone());
                }
            }
        }
        last_end = Some((s.turn_index, s.end));
        out.spans.push(s);
    }
    let kept: std::collections::HashSet<&str> = out.spans.iter().map(|s| s.span_id.as_str()).collect();
    out.relations = gold
        .relations
        .iter()
        .filter(|(a, b)| kept.contains(a.as_str()) && kept.contains(b.as_str()))
        .cloned()
        .collect();
    Ok(out)
}

/// Simulated labelers `L1..Ln` over every gold annotation.
pub fn simulate_panel(
    gold: &[AnnotationSet],
    corpus: &Corpus,
    noise: &Noise,
    labelers: usize,
    seed: u64,
) -> Result<Vec<AnnotationSet>> {
    let ontologies: BTreeMap<Task, Ontology> = Task::ALL.iter().map(|&t| (t, Ontology::default_for(t))).collect();
    let mut out = Vec::with_capacity(gold.len() * labelers);
    for (g, ann) in gold.iter().enumerate() {
        let lengths = corpus.require(&ann.conversation_id)?.turn_lengths();
        for l in 0..labelers {
            out.push(simulate_labeler(
                ann,
                &lengths,
                &ontologies[&ann.task],
                noise,
                &format!("L{}", l + 1),
                derive_seed(seed, g as u64, l as u64),
            )?);
        }
    }
    Ok(out)
}
