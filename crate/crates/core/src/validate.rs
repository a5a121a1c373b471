//! Task-specific validation rules.
//!
//! Rules are registered by id; [`Validator::default`] carries the four
//! built-in ones:
//!
//! | id | severity | condition |
//! |----|----------|-----------|
//! | R1 | error    | attribute span not linked to any entity span |
//! | R2 | error    | entity span without status where the task requires one |
//! | R3 | warning  | relation joining two attributes or two entities |
//! | R4 | error    | span tag missing from the ontology |

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotationSet;
use crate::ontology::{Ontology, TagKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub severity: Severity,
    pub conversation_id: String,
    pub labeler_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<(String, String)>,
    pub message: String,
}

pub trait Rule: Send + Sync {
    fn id(&self) -> &str;
    fn severity(&self) -> Severity;
    fn check(&self, annotation: &AnnotationSet, ontology: &Ontology, out: &mut Vec<Violation>);
}

fn violation(rule: &dyn Rule, ann: &AnnotationSet, message: String) -> Violation {
    Violation {
        rule_id: rule.id().to_string(),
        severity: rule.severity(),
        conversation_id: ann.conversation_id.clone(),
        labeler_id: ann.labeler_id.clone(),
        span_id: None,
        relation: None,
        message,
    }
}

pub struct OrphanAttribute;

impl Rule for OrphanAttribute {
    fn id(&self) -> &str {
        "R1"
    }

    fn severity(&self) -> Severity {
        Severity::Error
    }

    fn check(&self, ann: &AnnotationSet, ont: &Ontology, out: &mut Vec<Violation>) {
        let index = ann.span_index();
        let is_entity = |id: &str| index.get(id).is_some_and(|s| ont.is_entity(&s.tag));
        let mut linked = HashSet::new();
        for (a, b) in &ann.relations {
            if is_entity(b) {
                linked.insert(a.as_str());
            }
            if is_entity(a) {
                linked.insert(b.as_str());
            }
        }
        for span in &ann.spans {
            if ont.is_attribute(&span.tag) && !linked.contains(span.span_id.as_str()) {
                let mut v = violation(
                    self,
                    ann,
                    format!("attribute {:?} is not linked to an entity", span.tag),
                );
                v.span_id = Some(span.span_id.clone());
                out.push(v);
            }
        }
    }
}

pub struct MissingStatus;

impl Rule for MissingStatus {
    fn id(&self) -> &str {
        "R2"
    }

    fn severity(&self) -> Severity {
        Severity::Error
    }

    fn check(&self, ann: &AnnotationSet, ont: &Ontology, out: &mut Vec<Violation>) {
        if !ont.status_required {
            return;
        }
        for span in &ann.spans {
            if span.status.is_none() && ont.is_entity(&span.tag) {
                let mut v = violation(self, ann, format!("entity {:?} has no status", span.tag));
                v.span_id = Some(span.span_id.clone());
                out.push(v);
            }
        }
    }
}

pub struct RelationKind;

impl Rule for RelationKind {
    fn id(&self) -> &str {
        "R3"
    }

    fn severity(&self) -> Severity {
        Severity::Warning
    }

    fn check(&self, ann: &AnnotationSet, ont: &Ontology, out: &mut Vec<Violation>) {
        let index = ann.span_index();
        for (a, b) in &ann.relations {
            let kind = |id: &str| index.get(id).and_then(|s| ont.kind_of(&s.tag));
            let (Some(ka), Some(kb)) = (kind(a), kind(b)) else {
                continue;
            };
            if ka == kb {
                let what = match ka {
                    TagKind::Entity => "two entities",
                    TagKind::Attribute => "two attributes",
                };
                let mut v = violation(self, ann, format!("relation links {what}"));
                v.relation = Some((a.clone(), b.clone()));
                out.push(v);
            }
        }
    }
}

pub struct UnknownTag;

impl Rule for UnknownTag {
    fn id(&self) -> &str {
        "R4"
    }

    fn severity(&self) -> Severity {
        Severity::Error
    }

    fn check(&self, ann: &AnnotationSet, ont: &Ontology, out: &mut Vec<Violation>) {
        for span in &ann.spans {
            if ont.kind_of(&span.tag).is_none() {
                let mut v = violation(self, ann, format!("unknown tag {:?}", span.tag));
                v.span_id = Some(span.span_id.clone());
                out.push(v);
            }
        }
    }
}

pub struct Validator {
    rules: Vec<Box<dyn Rule>>,
}

impl Default for Validator {
    fn default() -> Self {
        Validator {
            rules: vec![
                Box::new(OrphanAttribute),
                Box::new(MissingStatus),
                Box::new(RelationKind),
                Box::new(UnknownTag),
            ],
        }
    }
}

impl Validator {
    pub fn empty() -> Self {
        Validator { rules: Vec::new() }
    }

    /// Register a rule; a rule with the same id replaces the old one.
    pub fn with_rule(mut self, rule: Box<dyn Rule>) -> Self {
        self.rules.retain(|r| r.id() != rule.id());
        self.rules.push(rule);
        self
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn validate(&self, annotation: &AnnotationSet, ontology: &Ontology) -> Vec<Violation> {
        let mut out = Vec::new();
        for rule in &self.rules {
            rule.check(annotation, ontology, &mut out);
        }
        out
    }
}

/// Run the built-in rules.
pub fn validate_annotation(annotation: &AnnotationSet, ontology: &Ontology) -> Vec<Violation> {
    Validator::default().validate(annotation, ontology)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSpan, Task};

    /// The stomach-issues example: every property linked, every entity with
    /// a status.
    fn stomach_example() -> AnnotationSet {
        let mut a = AnnotationSet::new("c1", "L1", Task::Symptoms);
        a.spans = vec![
            LabeledSpan::new("e1", 0, 3, 5, "GI:Other").with_status("Experienced"),
            LabeledSpan::new("a1", 0, 10, 12, "Property:Duration"),
            LabeledSpan::new("a2", 0, 14, 15, "Property:Severity/Amount"),
            LabeledSpan::new("a3", 1, 4, 6, "Property:Location"),
            LabeledSpan::new("a4", 2, 3, 6, "Property:Frequency"),
            LabeledSpan::new("e2", 2, 7, 8, "GI:Abdominal Pain").with_status("Experienced"),
            LabeledSpan::new("a5", 2, 9, 10, "Property:Frequency"),
            LabeledSpan::new("e3", 2, 12, 13, "GI:Nausea").with_status("Experienced"),
        ];
        a.relations = [("e1", "a1"), ("e1", "a2"), ("e1", "a3"), ("e2", "a4"), ("e3", "a5")]
            .iter()
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect();
        a
    }

    #[test]
    fn clean_example_passes() {
        let v = validate_annotation(&stomach_example(), &Ontology::default_for(Task::Symptoms));
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn unlinked_duration_is_orphan() {
        let mut a = stomach_example();
        a.relations.retain(|(_, b)| b != "a1");
        let v = validate_annotation(&a, &Ontology::default_for(Task::Symptoms));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule_id, "R1");
        assert_eq!(v[0].span_id.as_deref(), Some("a1"));
    }

    #[test]
    fn nausea_without_status() {
        let mut a = stomach_example();
        a.spans[7].status = None;
        let v = validate_annotation(&a, &Ontology::default_for(Task::Symptoms));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule_id, "R2");
        assert_eq!(v[0].severity, Severity::Error);
    }

    #[test]
    fn medications_need_no_status() {
        let mut a = AnnotationSet::new("c1", "L1", Task::Medications);
        a.spans.push(LabeledSpan::new("d", 0, 0, 1, "Drug"));
        assert!(validate_annotation(&a, &Ontology::default_for(Task::Medications)).is_empty());
    }

    #[test]
    fn entity_entity_link_is_warning_only() {
        let mut a = stomach_example();
        a.relations.push(("e1".into(), "e2".into()));
        let v = validate_annotation(&a, &Ontology::default_for(Task::Symptoms));
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].rule_id.as_str(), v[0].severity), ("R3", Severity::Warning));
    }

    #[test]
    fn attribute_linked_only_to_attribute_is_orphan_and_warned() {
        let mut a = stomach_example();
        a.relations.retain(|(_, b)| b != "a5");
        a.relations.push(("a4".into(), "a5".into()));
        let v = validate_annotation(&a, &Ontology::default_for(Task::Symptoms));
        let ids: Vec<_> = v.iter().map(|x| x.rule_id.as_str()).collect();
        assert_eq!(ids, ["R1", "R3"]);
    }

    #[test]
    fn unknown_tag_rule() {
        let mut a = stomach_example();
        a.spans.push(LabeledSpan::new("z", 1, 0, 1, "GI:Teleport"));
        let v = validate_annotation(&a, &Ontology::default_for(Task::Symptoms));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule_id, "R4");
    }

    #[test]
    fn removing_relations_only_adds_orphans() {
        let ont = Ontology::default_for(Task::Symptoms);
        let full = stomach_example();
        let base = validate_annotation(&full, &ont).len();
        for i in 0..full.relations.len() {
            let mut a = full.clone();
            a.relations.remove(i);
            let r1 = |v: &Vec<Violation>| v.iter().filter(|x| x.rule_id == "R1").count();
            assert!(r1(&validate_annotation(&a, &ont)) >= base);
        }
    }

    struct NoEmptyLabeler;
    impl Rule for NoEmptyLabeler {
        fn id(&self) -> &str {
            "X1"
        }
        fn severity(&self) -> Severity {
            Severity::Warning
        }
        fn check(&self, ann: &AnnotationSet, _: &Ontology, out: &mut Vec<Violation>) {
            if ann.labeler_id.is_empty() {
                out.push(violation(self, ann, "missing labeler".into()));
            }
        }
    }

    #[test]
    fn registry_is_extensible() {
        let v = Validator::default().with_rule(Box::new(NoEmptyLabeler));
        assert_eq!(v.rule_ids(), ["R1", "R2", "R3", "R4", "X1"]);
        let mut a = stomach_example();
        a.labeler_id.clear();
        let out = v.validate(&a, &Ontology::default_for(Task::Symptoms));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rule_id, "X1");
    }
}
