//! Task schemas: which tags exist, which are entities and which are
//! attributes, how entities roll up into organ systems, and which statuses
//! an entity may carry.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, Task, STATUS_SEPARATOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDef {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Placeholder tag not taken from a published inventory.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub tag: String,
    #[serde(default)]
    pub numeric_like: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    Entity,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub task: Task,
    pub entities: Vec<EntityDef>,
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub statuses: Vec<String>,
    #[serde(default)]
    pub status_required: bool,
    #[serde(default)]
    pub preference_order: Vec<String>,
}

const SYMPTOMS_JSON: &str = include_str!("../data/symptoms.json");
const MEDICATIONS_JSON: &str = include_str!("../data/medications.json");
const CONDITIONS_JSON: &str = include_str!("../data/conditions.json");

impl Ontology {
    /// Built-in schema for a task.
    pub fn default_for(task: Task) -> Ontology {
        let src = match task {
            Task::Symptoms => SYMPTOMS_JSON,
            Task::Medications => MEDICATIONS_JSON,
            Task::Conditions => CONDITIONS_JSON,
        };
        Ontology::from_json(src).expect("bundled ontology is valid")
    }

    pub fn defaults() -> Vec<Ontology> {
        Task::ALL.iter().map(|&t| Ontology::default_for(t)).collect()
    }

    pub fn from_json(src: &str) -> Result<Ontology> {
        let ont: Ontology = serde_json::from_str(src)?;
        ont.check()?;
        Ok(ont)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Ontology> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ont: Ontology = serde_json::from_str(&src).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        ont.check()?;
        Ok(ont)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let tags = self
            .entities
            .iter()
            .map(|e| &e.tag)
            .chain(self.attributes.iter().map(|a| &a.tag));
        for tag in tags {
            if tag.is_empty() || tag.contains(STATUS_SEPARATOR) {
                return Err(Error::InvalidOntology(format!("malformed tag {tag:?}")));
            }
            if !seen.insert(tag.as_str()) {
                return Err(Error::InvalidOntology(format!("duplicate tag {tag:?}")));
            }
        }
        for pref in &self.preference_order {
            if !self.attributes.iter().any(|a| &a.tag == pref) {
                return Err(Error::InvalidOntology(format!(
                    "preference entry {pref:?} is not an attribute"
                )));
            }
        }
        if self.status_required && self.statuses.is_empty() {
            return Err(Error::InvalidOntology(
                "status_required set but no statuses listed".into(),
            ));
        }
        if let Some(s) = self.statuses.iter().find(|s| s.contains(STATUS_SEPARATOR)) {
            return Err(Error::InvalidOntology(format!("malformed status {s:?}")));
        }
        Ok(())
    }

    pub fn kind_of(&self, tag: &str) -> Option<TagKind> {
        if self.entities.iter().any(|e| e.tag == tag) {
            Some(TagKind::Entity)
        } else if self.attributes.iter().any(|a| a.tag == tag) {
            Some(TagKind::Attribute)
        } else {
            None
        }
    }

    pub fn is_entity(&self, tag: &str) -> bool {
        self.kind_of(tag) == Some(TagKind::Entity)
    }

    pub fn is_attribute(&self, tag: &str) -> bool {
        self.kind_of(tag) == Some(TagKind::Attribute)
    }

    pub fn entity(&self, tag: &str) -> Option<&EntityDef> {
        self.entities.iter().find(|e| e.tag == tag)
    }

    pub fn system_of(&self, tag: &str) -> Option<&str> {
        self.entity(tag).and_then(|e| e.system.as_deref())
    }

    /// Only entities carry a status, and only when the task lists some.
    pub fn allows_status(&self, kind: TagKind) -> bool {
        kind == TagKind::Entity && !self.statuses.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .map(|e| e.tag.as_str())
            .chain(self.attributes.iter().map(|a| a.tag.as_str()))
    }

    /// Pick one attribute tag when several are equally defensible.
    ///
    /// Candidates in `preference_order` win in that order; the rest follow
    /// in lexicographic order.
    pub fn resolve_preference<'a, I>(&self, candidates: I) -> Result<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        candidates
            .into_iter()
            .min_by(|a, b| {
                let rank = |t: &str| self.preference_order.iter().position(|p| p == t).unwrap_or(usize::MAX);
                rank(a).cmp(&rank(b)).then_with(|| a.cmp(b))
            })
            .map(str::to_string)
            .ok_or(Error::EmptyCandidates)
    }

    /// Drop entity tags that are too rare or too contested.
    ///
    /// A dropped tag with an organ system is folded into that system's
    /// `Other` tag; one without a system disappears. Catch-all `Other` tags
    /// are never dropped, and attributes are never touched.
    pub fn prune(
        &self,
        counts: &HashMap<String, u64>,
        kappas: &HashMap<String, f64>,
        min_count: u64,
        min_kappa: f64,
    ) -> Pruned {
        let mut entities: Vec<EntityDef> = Vec::new();
        let mut remap = BTreeMap::new();
        let mut created: Vec<EntityDef> = Vec::new();

        for ent in &self.entities {
            let count = counts.get(&ent.tag).copied().unwrap_or(0);
            let kappa = kappas.get(&ent.tag).copied().unwrap_or(f64::NEG_INFINITY);
            // NaN kappa fails the comparison and is pruned.
            let keep = is_catch_all(&ent.tag) || (count >= min_count && kappa >= min_kappa);
            if keep {
                remap.insert(ent.tag.clone(), Some(ent.tag.clone()));
                entities.push(ent.clone());
                continue;
            }
            match &ent.system {
                Some(system) => {
                    let other = catch_all_for(&ent.tag, system);
                    let exists = self.entities.iter().any(|e| e.tag == other) || created.iter().any(|e| e.tag == other);
                    if !exists {
                        created.push(EntityDef {
                            tag: other.clone(),
                            system: Some(system.clone()),
                            aliases: Vec::new(),
                            synthetic: false,
                        });
                    }
                    remap.insert(ent.tag.clone(), Some(other));
                }
                None => {
                    remap.insert(ent.tag.clone(), None);
                }
            }
        }
        for ent in created {
            remap.insert(ent.tag.clone(), Some(ent.tag.clone()));
            entities.push(ent);
        }

        Pruned {
            ontology: Ontology {
                entities,
                ..self.clone()
            },
            remap,
        }
    }
}

fn is_catch_all(tag: &str) -> bool {
    tag.rsplit_once(':').is_some_and(|(_, leaf)| leaf == "Other")
}

/// `GI:Vomiting` folds into `GI:Other`; a tag without a prefix uses the
/// system name.
fn catch_all_for(tag: &str, system: &str) -> String {
    let prefix = tag.split_once(':').map_or(system, |(p, _)| p);
    format!("{prefix}:Other")
}

/// Result of [`Ontology::prune`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub ontology: Ontology,
    /// Old entity tag → new tag, or `None` when the tag was removed.
    pub remap: BTreeMap<String, Option<String>>,
}

impl Pruned {
    pub fn is_identity(&self) -> bool {
        self.remap.iter().all(|(k, v)| v.as_deref() == Some(k.as_str()))
    }

    /// Rewrite an annotation onto the pruned ontology. Spans whose tag was
    /// removed disappear together with their relations.
    pub fn apply(&self, ann: &AnnotationSet) -> AnnotationSet {
        let mut out = ann.clone();
        let mut removed = HashSet::new();
        out.spans.retain_mut(|span| match self.remap.get(&span.tag) {
            Some(Some(new)) => {
                span.tag = new.clone();
                true
            }
            Some(None) => {
                removed.insert(span.span_id.clone());
                false
            }
            None => true,
        });
        out.relations
            .retain(|(a, b)| !removed.contains(a) && !removed.contains(b));
        out
    }
}
