//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use clinlabel::adjudicate::{build_voted_reference, estimate_transition_stats, naive_majority, vote, CellVote};
use clinlabel::agreement::pairwise_kappa;
use clinlabel::bio::{decode_bio, encode_bio, TokenLabel, TurnLabels};
use clinlabel::corpus::{AnnotationSet, Conversation, Corpus, LabeledSpan, Speaker, Task, Turn};
use clinlabel::errors::{align, align_errors, ErrorType};
use clinlabel::ontology::Ontology;
use clinlabel::score::{score_corpus, score_spans, token_tag_accuracy, MatchKey, ScoreMode, ScoreReport};
use clinlabel::suggest::{lexicon_coverage, recall_experiment, Lexicon};
use clinlabel::synth::{generate_corpus, simulate_panel, Noise, SplitSizes, SynthConfig};
use clinlabel::tagger::{label_order, predict, train, viterbi, Lattice, TaggerModel, TrainConfig};
use clinlabel::turns::{
    eval_turns, gold_turn_classes, predict_turns, project_turn_classes, train_turns, MergeMode, TurnClass,
};
use clinlabel::validate::validate_annotation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn labels(s: &str) -> TurnLabels {
    s.split_whitespace().map(|l| l.parse().unwrap()).collect()
}

fn one_turn(id: &str, tokens: &[&str]) -> Conversation {
    Conversation {
        id: id.into(),
        turns: vec![Turn::new(
            Speaker::Patient,
            tokens.iter().map(|t| t.to_string()).collect(),
        )],
    }
}

fn voting_example() -> Check {
    let t0 = Instant::now();
    let rows = ["Drug_B Drug_I O", "O Drug_B Drug_I", "O O Drug_B"];
    let corpus = Corpus::new(vec![one_turn("c1", &["The", "pain", "medication"])]).map_err(|e| e.to_string())?;
    let anns: Vec<AnnotationSet> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut a = AnnotationSet::new("c1", format!("L{}", k + 1), Task::Medications);
            a.spans = decode_bio(&[labels(r)], true);
            a
        })
        .collect();
    let stats = estimate_transition_stats(&anns, &corpus);
    let per_labeler: Vec<Vec<TurnLabels>> = rows.iter().map(|r| vec![labels(r)]).collect();
    let voted = vote(&per_labeler, &stats).map_err(|e| e.to_string())?;
    ensure(voted == vec![labels("O Drug_B Drug_I")], format!("voted {voted:?}"))?;
    let reference = build_voted_reference(&anns, &corpus, &stats, None).map_err(|e| e.to_string())?;
    let span = &reference[0].spans[0];
    ensure(
        reference[0].spans.len() == 1 && (span.start, span.end, span.tag.as_str()) == (1, 3, "Drug"),
        "voted reference is not `pain medication` as Drug",
    )?;
    let naive = naive_majority(&per_labeler).map_err(|e| e.to_string())?;
    ensure(
        naive[0][0] == CellVote::Winner(TokenLabel::Outside),
        "naive token 0 should be O",
    )?;
    ensure(
        matches!(naive[0][1], CellVote::Tie(_)) && matches!(naive[0][2], CellVote::Tie(_)),
        "naive voting should be undetermined at tokens 1 and 2",
    )?;
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("O Drug_B Drug_I; naive ties at tokens 1-2; {elapsed:?}"))
}

/// Random non-overlapping spans over the given turn lengths.
fn random_spans(
    rng: &mut ChaCha8Rng,
    lengths: &[usize],
    tags: &[&str],
    statuses: &[Option<&str>],
    prefix: &str,
) -> Vec<LabeledSpan> {
    let mut out = Vec::new();
    for (turn, &n) in lengths.iter().enumerate() {
        let mut t = 0;
        while t < n {
            if rng.gen_bool(0.35) {
                let len = rng.gen_range(1..=3.min(n - t));
                let tag = tags[rng.gen_range(0..tags.len())];
                let mut s = LabeledSpan::new(format!("{prefix}{}", out.len()), turn, t, t + len, tag);
                s.status = statuses[rng.gen_range(0..statuses.len())].map(str::to_string);
                out.push(s);
                t += len;
            } else {
                t += 1;
            }
        }
    }
    out
}

/// Token-loop scorer written independently of the library.
fn oracle_scores(
    reference: &[LabeledSpan],
    predicted: &[LabeledSpan],
    lengths: &[usize],
    key: MatchKey,
) -> [(f64, usize, f64, usize); 2] {
    let key_of = |s: &LabeledSpan| match key {
        MatchKey::Tag => s.tag.clone(),
        MatchKey::TagPlusStatus => match &s.status {
            Some(st) => format!("{}|{}", s.tag, st),
            None => s.tag.clone(),
        },
    };
    let grid = |spans: &[LabeledSpan]| {
        let mut g: Vec<Vec<Option<String>>> = lengths.iter().map(|&n| vec![None; n]).collect();
        for s in spans {
            for cell in &mut g[s.turn_index][s.start..s.end] {
                *cell = Some(key_of(s));
            }
        }
        g
    };
    let (gr, gp) = (grid(reference), grid(predicted));
    let credit = |s: &LabeledSpan, other: &Vec<Vec<Option<String>>>, strict: bool| {
        let k = key_of(s);
        let mut product = 1.0;
        let mut sum = 0.0;
        for cell in &other[s.turn_index][s.start..s.end] {
            let m = if cell.as_deref() == Some(k.as_str()) { 1.0 } else { 0.0 };
            product *= m;
            sum += m;
        }
        if strict {
            product
        } else {
            sum / (s.end - s.start) as f64
        }
    };
    let mut out = [(0.0, 0, 0.0, 0); 2];
    for (i, strict) in [false, true].into_iter().enumerate() {
        out[i].0 = reference.iter().map(|s| credit(s, &gp, strict)).sum();
        out[i].1 = reference.len();
        out[i].2 = predicted.iter().map(|s| credit(s, &gr, strict)).sum();
        out[i].3 = predicted.len();
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn report_matches(r: &ScoreReport, (rs, n, ps, m): (f64, usize, f64, usize)) -> bool {
    let recall = if n == 0 { 1.0 } else { rs / n as f64 };
    let precision = if m == 0 { 1.0 } else { ps / m as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    close(r.overall.recall, recall) && close(r.overall.precision, precision) && close(r.overall.f1, f1)
}

fn scorer_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tags = ["Drug", "Property:Dose", "GI:Nausea"];
    let statuses = [None, Some("Experienced"), Some("Not Experienced")];
    for i in 0..1000 {
        let lengths: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..10)).collect();
        let r = random_spans(&mut rng, &lengths, &tags, &statuses, "r");
        let p = random_spans(&mut rng, &lengths, &tags, &statuses, "p");
        let mut ra = AnnotationSet::new("c", "ref", Task::Symptoms);
        ra.spans = r.clone();
        let mut pa = AnnotationSet::new("c", "pred", Task::Symptoms);
        pa.spans = p.clone();
        for key in [MatchKey::Tag, MatchKey::TagPlusStatus] {
            let oracle = oracle_scores(&r, &p, &lengths, key);
            let relaxed = score_spans(&ra, &pa, ScoreMode::Relaxed, key).map_err(|e| e.to_string())?;
            let strict = score_spans(&ra, &pa, ScoreMode::Strict, key).map_err(|e| e.to_string())?;
            ensure(
                report_matches(&relaxed, oracle[0]),
                format!("relaxed mismatch on instance {i}"),
            )?;
            ensure(
                report_matches(&strict, oracle[1]),
                format!("strict mismatch on instance {i}"),
            )?;
            ensure(
                strict.overall.recall <= relaxed.overall.recall
                    && strict.overall.precision <= relaxed.overall.precision,
                format!("strict above relaxed on instance {i}"),
            )?;
        }
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("1000 instances x 2 keys agree within 1e-12; {elapsed:?}"))
}

fn bio_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tags = ["Drug", "Property:Dose", "GI:Nausea"];
    let statuses = [None, Some("Experienced")];
    for i in 0..1000 {
        let lengths: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..12)).collect();
        let spans = random_spans(&mut rng, &lengths, &tags, &statuses, "x");
        let encoded = encode_bio(&spans, &lengths, true).map_err(|e| e.to_string())?;
        let decoded = decode_bio(&encoded, true);
        let strip = |v: &[LabeledSpan]| -> Vec<(usize, usize, usize, String)> {
            let mut out: Vec<_> = v
                .iter()
                .map(|s| (s.turn_index, s.start, s.end, s.composed_tag()))
                .collect();
            out.sort();
            out
        };
        ensure(
            strip(&spans) == strip(&decoded),
            format!("round trip failed on instance {i}"),
        )?;
    }
    let cases = [
        ("Drug_I Drug_I", vec![(0, 2, "Drug")]),
        ("O Drug_I", vec![(1, 2, "Drug")]),
        ("Drug_B Dose_I", vec![(0, 1, "Drug"), (1, 2, "Dose")]),
        ("Drug_B O Drug_I", vec![(0, 1, "Drug"), (2, 3, "Drug")]),
        ("Drug_B Drug_B", vec![(0, 1, "Drug"), (1, 2, "Drug")]),
    ];
    for (seq, want) in cases {
        let got: Vec<(usize, usize, String)> = decode_bio(&[labels(seq)], false)
            .into_iter()
            .map(|s| (s.start, s.end, s.tag))
            .collect();
        let want: Vec<(usize, usize, String)> = want.into_iter().map(|(a, b, t)| (a, b, t.to_string())).collect();
        ensure(got == want, format!("coercion of {seq:?} gave {got:?}"))?;
    }
    Ok("1000 random span sets round-trip; 5 ill-formed sequences coerce as tabulated".into())
}

fn kappa_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lengths = vec![100usize; 1000];
    let conv = Conversation {
        id: "k".into(),
        turns: lengths
            .iter()
            .map(|&n| Turn::new(Speaker::Patient, vec!["w".into(); n]))
            .collect(),
    };
    let random_labeler = |rng: &mut ChaCha8Rng, who: &str| {
        let mut a = AnnotationSet::new("k", who, Task::Symptoms);
        for (turn, &n) in lengths.iter().enumerate() {
            for t in 0..n {
                let tag = if rng.gen_bool(0.5) { "GI:Nausea" } else { "GI:Vomiting" };
                a.spans
                    .push(LabeledSpan::new(format!("{turn}.{t}"), turn, t, t + 1, tag));
            }
        }
        a
    };
    let a = random_labeler(&mut rng, "a");
    let b = random_labeler(&mut rng, "b");
    let same = pairwise_kappa(&a, &a, &conv).map_err(|e| e.to_string())?;
    ensure(same.kappa == 1.0, format!("identical gave {}", same.kappa))?;
    let rand_k = pairwise_kappa(&a, &b, &conv).map_err(|e| e.to_string())?;
    ensure(
        rand_k.kappa.abs() <= 0.05,
        format!("random labelers gave {}", rand_k.kappa),
    )?;

    let ten = one_turn("h", &["w"; 10]);
    let mut x = AnnotationSet::new("h", "x", Task::Medications);
    x.spans.push(LabeledSpan::new("s", 0, 0, 5, "Drug"));
    let mut y = AnnotationSet::new("h", "y", Task::Medications);
    y.spans.push(LabeledSpan::new("s", 0, 0, 6, "Drug"));
    let hand = pairwise_kappa(&x, &y, &ten).map_err(|e| e.to_string())?;
    ensure(hand.kappa == 0.8, format!("hand example gave {}", hand.kappa))?;
    Ok(format!(
        "identical 1, random {:.4} over 1e5 tokens, hand example 0.8",
        rand_k.kappa
    ))
}

fn voting_payoff() -> Check {
    let t0 = Instant::now();
    let noise = Noise {
        miss_rate: 0.1,
        boundary_jitter: 1,
        tag_confusion: 0.05,
        status_flip: 0.0,
    };
    let mut worst_margin = f64::INFINITY;
    for seed in 0..10u64 {
        let config = SynthConfig {
            seed,
            split: SplitSizes {
                train: 200,
                dev: 0,
                test: 0,
            },
            ..Default::default()
        };
        let (corpus, gold, _) = generate_corpus(&config).map_err(|e| e.to_string())?;
        let panel = simulate_panel(&gold, &corpus, &noise, 3, seed).map_err(|e| e.to_string())?;
        let stats = estimate_transition_stats(&panel, &corpus);
        let voted = build_voted_reference(&panel, &corpus, &stats, None).map_err(|e| e.to_string())?;
        let accuracy = |anns: &[&AnnotationSet]| -> Result<f64, String> {
            let index: HashMap<(&str, Task), &AnnotationSet> = anns
                .iter()
                .map(|a| ((a.conversation_id.as_str(), a.task), *a))
                .collect();
            let (mut hit, mut total) = (0, 0);
            for g in &gold {
                let lengths = corpus
                    .require(&g.conversation_id)
                    .map_err(|e| e.to_string())?
                    .turn_lengths();
                let empty = AnnotationSet::new(g.conversation_id.clone(), "", g.task);
                let other = index
                    .get(&(g.conversation_id.as_str(), g.task))
                    .copied()
                    .unwrap_or(&empty);
                let (h, t) = token_tag_accuracy(g, other, &lengths).map_err(|e| e.to_string())?;
                hit += h;
                total += t;
            }
            Ok(hit as f64 / total as f64)
        };
        let voted_acc = accuracy(&voted.iter().collect::<Vec<_>>())?;
        let mut best = 0.0f64;
        for l in ["L1", "L2", "L3"] {
            let mine: Vec<&AnnotationSet> = panel.iter().filter(|a| a.labeler_id == l).collect();
            best = best.max(accuracy(&mine)?);
        }
        ensure(
            voted_acc >= best,
            format!("seed {seed}: voted {voted_acc:.5} < best labeler {best:.5}"),
        )?;
        worst_margin = worst_margin.min(voted_acc - best);
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "voted >= best labeler on 10 seeds (smallest margin {worst_margin:.5}); {elapsed:?}"
    ))
}

/// Lexicon mapping each gold surface to its most frequent tag, grown in
/// seeded random order until it holds `target` of the distinct surfaces.
fn coverage_lexicon(gold: &[AnnotationSet], corpus: &Corpus, target: f64) -> Result<(Lexicon, f64), String> {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for ann in gold {
        let conv = corpus.require(&ann.conversation_id).map_err(|e| e.to_string())?;
        for s in &ann.spans {
            let text = conv.turns[s.turn_index].tokens[s.start..s.end].join(" ").to_lowercase();
            *counts.entry(text).or_default().entry(s.tag.clone()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, String)> = counts
        .into_iter()
        .map(|(surface, tags)| {
            let best = tags
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .unwrap()
                .0
                .clone();
            (surface, best)
        })
        .collect();
    let distinct = entries.len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    use rand::seq::SliceRandom;
    entries.shuffle(&mut rng);
    let mut lex = Lexicon::default();
    for (surface, tag) in entries {
        if lex.len() as f64 >= target * distinct as f64 {
            break;
        }
        lex.insert(&surface, &tag).map_err(|e| e.to_string())?;
    }
    let held = lex.len() as f64 / distinct.max(1) as f64;
    Ok((lex, held))
}

fn suggestion_experiment() -> Check {
    let config = SynthConfig {
        seed: 11,
        split: SplitSizes {
            train: 500,
            dev: 0,
            test: 0,
        },
        ..Default::default()
    };
    let (corpus, gold, _) = generate_corpus(&config).map_err(|e| e.to_string())?;
    let gold: Vec<AnnotationSet> = gold.into_iter().filter(|a| a.task == Task::Conditions).collect();
    let ont = Ontology::default_for(Task::Conditions);
    let conditions: Vec<AnnotationSet> = gold
        .iter()
        .map(|a| {
            let mut c = a.clone();
            c.spans.retain(|s| ont.is_entity(&s.tag));
            c.relations.clear();
            c
        })
        .collect();
    let (lex, coverage) = coverage_lexicon(&conditions, &corpus, 0.8)?;
    ensure(
        coverage >= 0.8,
        format!("lexicon holds only {coverage:.3} of condition surfaces"),
    )?;
    let total: usize = gold.iter().map(|a| a.spans.len()).sum();
    let share = conditions.iter().map(|a| a.spans.len()).sum::<usize>() as f64 / total as f64;
    // fraction of all gold spans a suggestion reproduces exactly
    let f = lexicon_coverage(&gold, &corpus, &lex).map_err(|e| e.to_string())?;
    let (p, q) = (0.3, 1.0);
    let expected = p * q * f;
    let seeds = 30;
    let mut deltas = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let r = recall_experiment(&gold, &corpus, p, q, &lex, seed).map_err(|e| e.to_string())?;
        ensure(r.delta > 0.0, format!("seed {seed}: delta {}", r.delta))?;
        deltas.push(r.delta);
    }
    let mean = deltas.iter().sum::<f64>() / seeds as f64;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0);
    let half_width = 3.0 * (var / seeds as f64).sqrt();
    ensure(
        (mean - expected).abs() <= half_width,
        format!("mean delta {mean:.4} outside {expected:.4} +/- {half_width:.4}"),
    )?;
    for (pp, qq) in [(0.0, 1.0), (0.3, 0.0)] {
        let r = recall_experiment(&gold, &corpus, pp, qq, &lex, 1).map_err(|e| e.to_string())?;
        ensure(r.delta == 0.0, format!("p={pp}, q={qq} gave delta {}", r.delta))?;
    }
    Ok(format!(
        "lexicon holds {coverage:.3} of condition surfaces (share {share:.3}), reproduces {f:.3} of gold spans; mean delta {mean:.4} vs expected {expected:.4} (+/- {half_width:.4}); zero at p=0 and q=0"
    ))
}

fn brute_force(lattice: &Lattice) -> Vec<usize> {
    let (l, n) = (lattice.labels.len(), lattice.len());
    let mut best: Option<(f64, Vec<usize>)> = None;
    let total = l.pow(n as u32);
    for code in 0..total {
        let mut path = vec![0; n];
        let mut c = code;
        for t in (0..n).rev() {
            path[t] = c % l;
            c /= l;
        }
        if let Some(s) = lattice.path_score(&path) {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

fn viterbi_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool: Vec<TokenLabel> = ["O", "A_B", "A_I", "B_B", "B_I"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    for i in 0..1000 {
        let l = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=8);
        let mut labels = vec![pool[0].clone()];
        while labels.len() < l {
            let c = pool[rng.gen_range(1..pool.len())].clone();
            if !labels.contains(&c) {
                labels.push(c);
            }
        }
        labels.sort_by(label_order);
        let mut q = |count: usize| -> Vec<f64> { (0..count).map(|_| rng.gen_range(-8i32..=8) as f64 * 0.25).collect() };
        let start = q(l);
        let transition = q(l * l);
        let emission = q(n * l);
        let lattice = Lattice {
            labels: &labels,
            start: &start,
            transition: &transition,
            emission: &emission,
        };
        let got = viterbi(&lattice);
        let want = brute_force(&lattice);
        ensure(
            got == want,
            format!("instance {i}: viterbi {got:?} vs enumeration {want:?}"),
        )?;
    }
    Ok("1000 instances equal exhaustive argmax, ties included".into())
}

fn split_subset(anns: &[AnnotationSet], ids: &[String]) -> Vec<AnnotationSet> {
    let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    anns.iter()
        .filter(|a| keep.contains(a.conversation_id.as_str()))
        .cloned()
        .collect::<Vec<_>>()
}

fn end_to_end() -> Check {
    let t0 = Instant::now();
    let config = SynthConfig {
        seed: 2024,
        ..Default::default()
    };
    let (corpus, gold, split) = generate_corpus(&config).map_err(|e| e.to_string())?;
    let train_gold = split_subset(&gold, &split.train);
    let dev_gold = split_subset(&gold, &split.dev);
    let tcfg = TrainConfig {
        epochs: 10,
        seed: 5,
        ..Default::default()
    };
    let mut models: Vec<TaggerModel> = Vec::new();
    for task in Task::ALL {
        let ont = Ontology::default_for(task);
        let a = train(&train_gold, &corpus, &ont, &tcfg).map_err(|e| e.to_string())?;
        let b = train(&train_gold, &corpus, &ont, &tcfg).map_err(|e| e.to_string())?;
        ensure(
            a.to_json().map_err(|e| e.to_string())? == b.to_json().map_err(|e| e.to_string())?,
            format!("{task} model differs between runs"),
        )?;
        models.push(a);
    }
    let mut preds = Vec::new();
    for id in &split.dev {
        let conv = corpus.require(id).map_err(|e| e.to_string())?;
        for m in &models {
            preds.push(predict(m, conv));
        }
    }
    let report =
        score_corpus(&dev_gold, &preds, ScoreMode::Relaxed, MatchKey::TagPlusStatus).map_err(|e| e.to_string())?;
    let f1 = report.overall.f1;
    ensure(f1 >= 0.70, format!("dev relaxed F1 {f1:.4} < 0.70"))?;

    let turn_model = train_turns(&train_gold, &corpus, 10, 5, MergeMode::AllTasks).map_err(|e| e.to_string())?;
    let gold_turns = gold_turn_classes(&dev_gold, &corpus, MergeMode::AllTasks).map_err(|e| e.to_string())?;
    let mut turn_pred = BTreeMap::new();
    let mut projected = BTreeMap::new();
    for id in &split.dev {
        let conv = corpus.require(id).map_err(|e| e.to_string())?;
        turn_pred.insert(id.clone(), predict_turns(&turn_model, conv));
        let mine: Vec<&AnnotationSet> = preds.iter().filter(|p| &p.conversation_id == id).collect();
        projected.insert(id.clone(), project_turn_classes(mine, conv.turns.len()));
    }
    let turn_eval = eval_turns(&turn_pred, &gold_turns).map_err(|e| e.to_string())?;
    let proj_eval = eval_turns(&projected, &gold_turns).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut table = Vec::new();
    for c in TurnClass::ALL {
        let (t, p) = (turn_eval.per_class[&c].recall, proj_eval.per_class[&c].recall);
        if t >= p {
            wins += 1;
        }
        table.push(format!("{c} {t:.2}/{p:.2}"));
    }
    ensure(
        wins >= 4,
        format!(
            "turn model recall >= tagger on only {wins}/6 classes: {}",
            table.join(", ")
        ),
    )?;
    Ok(format!(
        "dev F1 {f1:.4}, models bit-identical; turn vs projected recall {wins}/6 [{}]; {:?}",
        table.join(", "),
        t0.elapsed()
    ))
}

fn error_accounting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tags = ["GI:Nausea", "GI:Vomiting", "Neuro:Headache"];
    let statuses = [Some("Experienced"), Some("Not Experienced")];
    for i in 0..1000 {
        let lengths: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..10)).collect();
        let mut r = AnnotationSet::new("c", "ref", Task::Symptoms);
        r.spans = random_spans(&mut rng, &lengths, &tags, &statuses, "r");
        let mut p = AnnotationSet::new("c", "pred", Task::Symptoms);
        p.spans = random_spans(&mut rng, &lengths, &tags, &statuses, "p");
        let a = align(&r, &p, None).map_err(|e| e.to_string())?;
        let (d, ins, s) = (
            a.count(ErrorType::Deletion),
            a.count(ErrorType::Insertion),
            a.count(ErrorType::Substitution),
        );
        ensure(
            d + s + a.correct.len() == r.spans.len(),
            format!("reference identity fails on {i}"),
        )?;
        ensure(
            ins + s + a.correct.len() == p.spans.len(),
            format!("prediction identity fails on {i}"),
        )?;
        ensure(
            align_errors(&r, &r, None).map_err(|e| e.to_string())?.is_empty(),
            format!("align(X,X) non-empty on {i}"),
        )?;
    }
    Ok("both count identities hold on 1000 fuzzed pairs; align(X,X) empty".into())
}

fn validator() -> Check {
    let config = SynthConfig {
        seed: 3,
        ..Default::default()
    };
    let (_, gold, _) = generate_corpus(&config).map_err(|e| e.to_string())?;
    let onts: BTreeMap<Task, Ontology> = Task::ALL.iter().map(|&t| (t, Ontology::default_for(t))).collect();
    let mut violations = 0;
    for ann in &gold {
        violations += validate_annotation(ann, &onts[&ann.task]).len();
    }
    ensure(violations == 0, format!("{violations} violations on synth gold"))?;

    let (mut orphan, mut status) = (0, 0);
    for ann in gold.iter().filter(|a| a.task == Task::Symptoms) {
        let ont = &onts[&ann.task];
        if let Some(rel) = ann.relations.first() {
            let mut bad = ann.clone();
            let attr = if ont.is_attribute(&rel.1) {
                rel.0.clone()
            } else {
                rel.1.clone()
            };
            bad.relations.retain(|(a, b)| a != &attr && b != &attr);
            let v = validate_annotation(&bad, ont);
            ensure(
                v.iter()
                    .any(|x| x.rule_id == "R1" && x.span_id.as_deref() == Some(attr.as_str())),
                format!("orphaned {attr} in {} not caught", ann.conversation_id),
            )?;
            orphan += 1;
        }
        if let Some(i) = ann.spans.iter().position(|s| ont.is_entity(&s.tag)) {
            let mut bad = ann.clone();
            bad.spans[i].status = None;
            let v = validate_annotation(&bad, ont);
            ensure(
                v.iter()
                    .any(|x| x.rule_id == "R2" && x.span_id.as_deref() == Some(ann.spans[i].span_id.as_str())),
                format!("missing status in {} not caught", ann.conversation_id),
            )?;
            status += 1;
        }
    }
    ensure(orphan > 0 && status > 0, "no defects were injected")?;
    Ok(format!(
        "{} gold sets clean; {orphan} orphan and {status} missing-status defects caught",
        gold.len()
    ))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("three-labeler vote example", voting_example),
        ("scorer matches brute-force oracle", scorer_oracle),
        ("BIO round trip and coercion", bio_round_trip),
        ("kappa checks", kappa_checks),
        ("voting payoff on synthetic panels", voting_payoff),
        ("suggestion recall experiment", suggestion_experiment),
        ("Viterbi optimality", viterbi_optimality),
        ("tagger and turn detector end to end", end_to_end),
        ("error accounting identities", error_accounting),
        ("validator on gold and injected defects", validator),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
