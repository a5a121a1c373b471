//! Dictionary-driven mention suggestions and a simulation of how much
//! recall they recover for a labeler who misses mentions.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, AnnotationSet, Conversation, Corpus, LabeledSpan, SplitManifest};
use crate::error::{Error, Result};
use crate::score::{score_corpus, MatchKey, ScoreMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface: String,
    pub tag: String,
}

/// Lowercased token sequences mapped to tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashMap<Vec<String>, String>,
    longest: usize,
}

fn surface_key(surface: &str) -> Vec<String> {
    surface.split_whitespace().map(str::to_lowercase).collect()
}

impl Lexicon {
    pub fn from_entries<I: IntoIterator<Item = LexiconEntry>>(entries: I) -> Result<Self> {
        let mut lex = Lexicon::default();
        for e in entries {
            lex.insert(&e.surface, &e.tag)?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(read_jsonl::<LexiconEntry>(path)?)
    }

    pub fn insert(&mut self, surface: &str, tag: &str) -> Result<()> {
        let key = surface_key(surface);
        if key.is_empty() {
            return Err(Error::InvalidLexicon("empty surface form".into()));
        }
        if let Some(existing) = self.entries.get(&key) {
            if existing != tag {
                return Err(Error::InvalidLexicon(format!(
                    "surface {surface:?} mapped to both {existing:?} and {tag:?}"
                )));
            }
        }
        self.longest = self.longest.max(key.len());
        self.entries.insert(key, tag.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, tokens: &[String]) -> Option<&str> {
        let key: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        self.entries.get(&key).map(String::as_str)
    }

    /// Entries sorted by surface, for writing back out.
    pub fn entries(&self) -> Vec<LexiconEntry> {
        let mut out: Vec<LexiconEntry> = self
            .entries
            .iter()
            .map(|(k, v)| LexiconEntry {
                surface: k.join(" "),
                tag: v.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.surface.cmp(&b.surface));
        out
    }
}

/// Greedy longest-match scan, case-insensitive, never overlapping.
/// Suggestions carry no status.
pub fn suggest(conversation: &Conversation, lexicon: &Lexicon) -> Vec<LabeledSpan> {
    let mut out = Vec::new();
    if lexicon.is_empty() {
        return out;
    }
    for (turn_index, turn) in conversation.turns.iter().enumerate() {
        let lower: Vec<String> = turn.tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut i = 0;
        while i < lower.len() {
            let max = lexicon.longest.min(lower.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|len| lexicon.entries.get(&lower[i..i + len]).map(|tag| (len, tag)));
            match hit {
                Some((len, tag)) => {
                    out.push(LabeledSpan::new(
                        format!("sg{}", out.len() + 1),
                        turn_index,
                        i,
                        i + len,
                        tag.clone(),
                    ));
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    out
}

/// [`suggest`], refusing conversations outside the train split so that
/// evaluation references never see suggestions.
pub fn suggest_in_split(
    conversation: &Conversation,
    lexicon: &Lexicon,
    split: &SplitManifest,
) -> Result<Vec<LabeledSpan>> {
    if !split.is_train(&conversation.id) {
        return Err(Error::NotInTrainSplit(conversation.id.clone()));
    }
    Ok(suggest(conversation, lexicon))
}

/// Fraction of gold spans that some suggestion reproduces exactly (turn,
/// extent and tag); the recall a fully accepting labeler can recover.
pub fn lexicon_coverage(gold: &[AnnotationSet], corpus: &Corpus, lexicon: &Lexicon) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ann in gold {
        let suggestions = suggest(corpus.require(&ann.conversation_id)?, lexicon);
        for span in &ann.spans {
            total += 1;
            hit += usize::from(suggestions.iter().any(|s| {
                s.turn_index == span.turn_index && s.start == span.start && s.end == span.end && s.tag == span.tag
            }));
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallExperiment {
    pub recall_without: f64,
    pub recall_with: f64,
    pub delta: f64,
    pub gold_spans: usize,
    pub dropped: usize,
    pub recovered: usize,
}

/// Simulate a labeler who misses each gold span with probability
/// `miss_rate`, then accepts each suggestion that recovers a missed span
/// (same turn, extent and tag) with probability `accept_rate`. Recall is
/// relaxed, matched on tag only since suggestions have no status.
pub fn recall_experiment(
    gold: &[AnnotationSet],
    corpus: &Corpus,
    miss_rate: f64,
    accept_rate: f64,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<RecallExperiment> {
    for (name, p) in [("miss_rate", miss_rate), ("accept_rate", accept_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut without = Vec::with_capacity(gold.len());
    let mut with = Vec::with_capacity(gold.len());
    let (mut total, mut dropped, mut recovered) = (0, 0, 0);

    for ann in gold {
        let conv = corpus.require(&ann.conversation_id)?;
        let suggestions = suggest(conv, lexicon);
        let mut kept = ann.clone();
        kept.labeler_id = "SIMULATED".into();
        kept.relations.clear();
        kept.spans.clear();
        let mut assisted = kept.clone();
        for span in &ann.spans {
            total += 1;
            if !rng.gen_bool(miss_rate) {
                kept.spans.push(span.clone());
                assisted.spans.push(span.clone());
                continue;
            }
            dropped += 1;
            let hit = suggestions.iter().find(|s| {
                s.turn_index == span.turn_index && s.start == span.start && s.end == span.end && s.tag == span.tag
            });
            if let Some(s) = hit {
                if rng.gen_bool(accept_rate) {
                    recovered += 1;
                    let mut s = s.clone();
                    s.span_id = span.span_id.clone();
                    assisted.spans.push(s);
                }
            }
        }
        without.push(kept);
        with.push(assisted);
    }

    let recall_without = score_corpus(gold, &without, ScoreMode::Relaxed, MatchKey::Tag)?
        .overall
        .recall;
    let recall_with = score_corpus(gold, &with, ScoreMode::Relaxed, MatchKey::Tag)?
        .overall
        .recall;
    Ok(RecallExperiment {
        recall_without,
        recall_with,
        delta: recall_with - recall_without,
        gold_spans: total,
        dropped,
        recovered,
    })
}
