//! Label and relation counts per task.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, Corpus, Task};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: Task,
    pub annotation_sets: usize,
    pub conversations: usize,
    pub spans: usize,
    pub relations: usize,
    pub spans_per_conversation: f64,
    pub relations_per_conversation: f64,
    /// Distinct lowercased surface forms when conversations are supplied,
    /// otherwise distinct (conversation, turn, start, end) extents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unique_spans: Option<usize>,
    pub per_tag: BTreeMap<String, usize>,
}

/// Counts grouped by task, in task order. Per-conversation means divide by
/// annotation sets, so several labelers on one conversation each count.
pub fn annotation_stats(
    annotations: &[AnnotationSet],
    corpus: Option<&Corpus>,
    unique: bool,
) -> Result<Vec<TaskStats>> {
    let mut out = Vec::new();
    for task in Task::ALL {
        let anns: Vec<&AnnotationSet> = annotations.iter().filter(|a| a.task == task).collect();
        if anns.is_empty() {
            continue;
        }
        let spans: usize = anns.iter().map(|a| a.spans.len()).sum();
        let relations: usize = anns.iter().map(|a| a.relations.len()).sum();
        let conversations: BTreeSet<&str> = anns.iter().map(|a| a.conversation_id.as_str()).collect();
        let mut per_tag = BTreeMap::new();
        for s in anns.iter().flat_map(|a| &a.spans) {
            *per_tag.entry(s.tag.clone()).or_insert(0) += 1;
        }
        let unique_spans = if unique {
            Some(match corpus {
                Some(corpus) => {
                    let mut surfaces = BTreeSet::new();
                    for a in &anns {
                        let conv = corpus.require(&a.conversation_id)?;
                        for s in &a.spans {
                            let Some(turn) = conv.turns.get(s.turn_index) else {
                                continue;
                            };
                            let Some(tokens) = turn.tokens.get(s.start..s.end) else {
                                continue;
                            };
                            surfaces.insert(tokens.join(" ").to_lowercase());
                        }
                    }
                    surfaces.len()
                }
                None => anns
                    .iter()
                    .flat_map(|a| {
                        a.spans
                            .iter()
                            .map(move |s| (a.conversation_id.as_str(), s.turn_index, s.start, s.end))
                    })
                    .collect::<BTreeSet<_>>()
                    .len(),
            })
        } else {
            None
        };
        let n = anns.len() as f64;
        out.push(TaskStats {
            task,
            annotation_sets: anns.len(),
            conversations: conversations.len(),
            spans,
            relations,
            spans_per_conversation: spans as f64 / n,
            relations_per_conversation: relations as f64 / n,
            unique_spans,
            per_tag,
        });
    }
    Ok(out)
}
