use std::collections::HashMap;

use clinlabel::adjudicate::{vote, TransitionStats};
use clinlabel::agreement::pairwise_kappa;
use clinlabel::bio::{decode_bio, encode_bio, normalize};
use clinlabel::corpus::{AnnotationSet, Conversation, LabeledSpan, Speaker, Task, Turn};
use clinlabel::ontology::Ontology;
use clinlabel::score::{score_spans, MatchKey, ScoreMode};
use clinlabel::synth::{generate_corpus, SplitSizes, SynthConfig};
use clinlabel::validate::validate_annotation;
use proptest::prelude::*;

const TAGS: [&str; 3] = ["GI:Nausea", "GI:Vomiting", "Neuro:Headache"];

/// Non-overlapping spans over one turn of `n` tokens, from a per-token
/// plan: 0 = outside, k = start a span of tag k-1 lasting 1 or 2 tokens.
fn spans_from(plan: &[(u8, bool)], n: usize) -> Vec<LabeledSpan> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < n {
        let (what, long) = plan[t];
        if what == 0 {
            t += 1;
            continue;
        }
        let end = if long { (t + 2).min(n) } else { t + 1 };
        let mut s = LabeledSpan::new(format!("s{t}"), 0, t, end, TAGS[(what - 1) as usize]);
        s.status = Some("Experienced".into());
        out.push(s);
        t = end;
    }
    out
}

fn arb_spans(n: usize) -> impl Strategy<Value = Vec<LabeledSpan>> {
    prop::collection::vec((0u8..=3, any::<bool>()), n).prop_map(move |plan| spans_from(&plan, n))
}

fn conv(n: usize) -> Conversation {
    Conversation {
        id: "c".into(),
        turns: vec![Turn::new(Speaker::Patient, vec!["w".into(); n])],
    }
}

fn set(labeler: &str, spans: Vec<LabeledSpan>) -> AnnotationSet {
    let mut a = AnnotationSet::new("c", labeler, Task::Symptoms);
    a.spans = spans;
    a
}

fn pair() -> impl Strategy<Value = (usize, Vec<LabeledSpan>, Vec<LabeledSpan>)> {
    (1usize..20).prop_flat_map(|n| (Just(n), arb_spans(n), arb_spans(n)))
}

proptest! {
    #[test]
    fn kappa_is_symmetric_and_bounded((n, x, y) in pair()) {
        let (a, b) = (set("a", x), set("b", y));
        let ab = pairwise_kappa(&a, &b, &conv(n)).unwrap();
        let ba = pairwise_kappa(&b, &a, &conv(n)).unwrap();
        prop_assert_eq!(ab.kappa, ba.kappa);
        prop_assert!(ab.kappa <= ab.observed + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab.kappa));
    }

    #[test]
    fn kappa_ignores_consistent_renaming((n, x, y) in pair()) {
        let rename = |spans: &[LabeledSpan]| -> Vec<LabeledSpan> {
            spans
                .iter()
                .cloned()
                .map(|mut s| {
                    s.tag = format!("Renamed:{}", TAGS.iter().position(|t| *t == s.tag).unwrap());
                    s
                })
                .collect()
        };
        let before = pairwise_kappa(&set("a", x.clone()), &set("b", y.clone()), &conv(n)).unwrap();
        let after = pairwise_kappa(&set("a", rename(&x)), &set("b", rename(&y)), &conv(n)).unwrap();
        prop_assert!((before.kappa - after.kappa).abs() < 1e-12);
    }

    #[test]
    fn strict_never_exceeds_relaxed((_n, x, y) in pair()) {
        let (r, p) = (set("r", x), set("p", y));
        for key in [MatchKey::Tag, MatchKey::TagPlusStatus] {
            let relaxed = score_spans(&r, &p, ScoreMode::Relaxed, key).unwrap().overall;
            let strict = score_spans(&r, &p, ScoreMode::Strict, key).unwrap().overall;
            prop_assert!(strict.recall <= relaxed.recall + 1e-12);
            prop_assert!(strict.precision <= relaxed.precision + 1e-12);
        }
        let own = score_spans(&r, &r, ScoreMode::Strict, MatchKey::TagPlusStatus).unwrap();
        prop_assert_eq!(own.overall.f1, 1.0);
    }

    #[test]
    fn bio_round_trip((n, x, _y) in pair()) {
        let encoded = encode_bio(&x, &[n], true).unwrap();
        let decoded = decode_bio(&encoded, true);
        let key = |v: &[LabeledSpan]| v.iter().map(|s| (s.start, s.end, s.composed_tag())).collect::<Vec<_>>();
        prop_assert_eq!(key(&x), key(&decoded));
        prop_assert_eq!(normalize(&encoded), encoded);
    }

    /// Marks come from transition counts, not the labelers, so two touching
    /// spans of one tag may merge; away from that case agreement survives.
    #[test]
    fn unanimous_labelers_win((n, x, _y) in pair(), k in 1usize..5) {
        prop_assume!(x.windows(2).all(|w| w[0].end < w[1].start || w[0].tag != w[1].tag));
        let seq = encode_bio(&x, &[n], true).unwrap();
        let rows = vec![seq.clone(); k];
        let mut stats = TransitionStats::new();
        for s in seq.iter() {
            stats.observe_sequence(s);
        }
        let voted = vote(&rows, &stats).unwrap();
        let key = |v: &[LabeledSpan]| v.iter().map(|s| (s.start, s.end, s.composed_tag())).collect::<Vec<_>>();
        prop_assert_eq!(key(&decode_bio(&voted, true)), key(&x));
    }
}

#[test]
fn removing_relations_only_adds_orphans() {
    let (_, gold, _) = generate_corpus(&SynthConfig {
        seed: 9,
        split: SplitSizes {
            train: 40,
            dev: 0,
            test: 0,
        },
        ..Default::default()
    })
    .unwrap();
    for ann in &gold {
        let ont = Ontology::default_for(ann.task);
        let orphans = |a: &AnnotationSet| {
            validate_annotation(a, &ont)
                .into_iter()
                .filter(|v| v.rule_id == "R1")
                .count()
        };
        let mut cut = ann.clone();
        let mut prev = orphans(&cut);
        while !cut.relations.is_empty() {
            cut.relations.pop();
            let now = orphans(&cut);
            assert!(
                now >= prev,
                "R1 count fell after removing a relation in {}",
                ann.conversation_id
            );
            prev = now;
        }
    }
}

#[test]
fn pruned_annotations_validate_against_pruned_ontology() {
    let (_, gold, _) = generate_corpus(&SynthConfig {
        seed: 2,
        split: SplitSizes {
            train: 40,
            dev: 0,
            test: 0,
        },
        ..Default::default()
    })
    .unwrap();
    let ont = Ontology::default_for(Task::Symptoms);
    let anns: Vec<&AnnotationSet> = gold.iter().filter(|a| a.task == Task::Symptoms).collect();
    let mut counts: HashMap<String, u64> = ont.entities.iter().map(|e| (e.tag.clone(), 0)).collect();
    for s in anns.iter().flat_map(|a| &a.spans) {
        if let Some(c) = counts.get_mut(&s.tag) {
            *c += 1;
        }
    }
    let kappas: HashMap<String, f64> = ont.entities.iter().map(|e| (e.tag.clone(), 1.0)).collect();
    let threshold = {
        let mut v: Vec<u64> = counts.values().copied().collect();
        v.sort();
        v[v.len() / 2]
    };
    let pruned = ont.prune(&counts, &kappas, threshold, 0.5);
    assert!(pruned.ontology.entities.len() < ont.entities.len());
    for ann in anns {
        let rewritten = pruned.apply(ann);
        let v = validate_annotation(&rewritten, &pruned.ontology);
        assert!(v.is_empty(), "{v:?}");
    }
}

#[test]
fn preference_ignores_candidate_order() {
    let ont = Ontology::default_for(Task::Medications);
    let attrs: Vec<&str> = ont.attributes.iter().map(|a| a.tag.as_str()).collect();
    for i in 0..attrs.len() {
        for j in 0..attrs.len() {
            if i == j {
                continue;
            }
            let fwd = ont.resolve_preference([attrs[i], attrs[j]]).unwrap();
            let rev = ont.resolve_preference([attrs[j], attrs[i]]).unwrap();
            assert_eq!(fwd, rev);
        }
    }
}
