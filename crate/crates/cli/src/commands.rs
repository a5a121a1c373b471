use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clinlabel::adjudicate::{build_voted_reference, estimate_transition_stats};
use clinlabel::agreement::{agreement_matrix, qa_scores, select_reviewers, tag_counts, tag_kappas};
use clinlabel::corpus::{
    cross_validate, load_annotations, load_conversations, read_jsonl, write_annotations, write_conversations,
    write_jsonl, AnnotationSet, Conversation, Corpus, SplitManifest, Task,
};
use clinlabel::errors::{aggregate_report, align_errors, record_category, ErrorRecord, ErrorType};
use clinlabel::ontology::Ontology;
use clinlabel::score::{
    score_conversation_set, score_corpus, score_relations_corpus, MatchKey, ScoreMode, ScoreReport,
};
use clinlabel::stats::annotation_stats;
use clinlabel::suggest::{suggest, suggest_in_split, Lexicon};
use clinlabel::synth::{default_lexicon, generate_corpus, simulate_panel, SynthConfig};
use clinlabel::tagger::{predict, train, SpanFilter, TaggerModel, TrainConfig};
use clinlabel::turns::{
    eval_turns, gold_turn_classes, predict_turns, project_turn_classes, train_turns, turn_eval_csv, MergeMode,
    TurnClasses, TurnModel,
};
use clinlabel::validate::{validate_annotation, Severity};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{self, csv_field, emit, table};
use crate::*;

pub const SUGGEST_LABELER: &str = "SUGGEST";

/// Bad flag combinations caught after parsing; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let g = cli.global;
    if g.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(g.workers).build()?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(&g, a),
        Command::Validate(a) => validate(a),
        Command::Vote(a) => vote(a),
        Command::Score(a) => score(&g, a),
        Command::Kappa(a) => kappa(&g, a),
        Command::Qa(a) => qa(&g, a),
        Command::Prune(a) => prune(&g, a),
        Command::Suggest(a) => suggest_cmd(a),
        Command::TrainTagger(a) => train_tagger(&g, a),
        Command::Tag(a) => tag(a),
        Command::TrainTurns(a) => train_turns_cmd(&g, a),
        Command::DetectTurns(a) => detect_turns(&g, a),
        Command::Errors(ErrorsCommand::Align(a)) => errors_align(a),
        Command::Errors(ErrorsCommand::Annotate(a)) => errors_annotate(&g, a),
        Command::Errors(ErrorsCommand::Report(a)) => errors_report(&g, a),
        Command::Stats(a) => stats(&g, a),
    })
}

fn annotations(path: &Path) -> Result<Vec<AnnotationSet>> {
    load_annotations(path).with_context(|| format!("loading annotations from {}", path.display()))
}

fn conversations(path: &Path) -> Result<Corpus> {
    load_conversations(path).with_context(|| format!("loading conversations from {}", path.display()))
}

fn split(path: &Path) -> Result<SplitManifest> {
    SplitManifest::load(path).with_context(|| format!("loading split manifest {}", path.display()))
}

/// Built-in ontologies, replaced by any given on the command line.
fn ontologies(paths: &[std::path::PathBuf]) -> Result<BTreeMap<Task, Ontology>> {
    let mut out: BTreeMap<Task, Ontology> = Task::ALL.iter().map(|&t| (t, Ontology::default_for(t))).collect();
    for p in paths {
        let ont = Ontology::load(p).with_context(|| format!("loading ontology {}", p.display()))?;
        out.insert(ont.task, ont);
    }
    Ok(out)
}

fn ontology_for(task: Task, path: Option<&Path>) -> Result<Ontology> {
    let ont = match path {
        Some(p) => Ontology::load(p).with_context(|| format!("loading ontology {}", p.display()))?,
        None => Ontology::default_for(task),
    };
    if ont.task != task {
        return Err(usage(format!("ontology is for {}, not {task}", ont.task)));
    }
    Ok(ont)
}

fn part_ids(manifest: &SplitManifest, part: PartArg) -> &[String] {
    match part {
        PartArg::Train => &manifest.train,
        PartArg::Dev => &manifest.dev,
        PartArg::Test => &manifest.test,
    }
}

/// Conversations of one split part, or all of them.
fn selected<'a>(corpus: &'a Corpus, split_path: Option<&Path>, part: Option<PartArg>) -> Result<Vec<&'a Conversation>> {
    match (split_path, part) {
        (Some(p), Some(part)) => {
            let manifest = split(p)?;
            part_ids(&manifest, part)
                .iter()
                .map(|id| corpus.require(id).map_err(Into::into))
                .collect()
        }
        _ => Ok(corpus.iter().collect()),
    }
}

/// Annotations on conversations of one split part, or all of them.
fn in_part(anns: Vec<AnnotationSet>, split_path: Option<&Path>, part: Option<PartArg>) -> Result<Vec<AnnotationSet>> {
    let (Some(p), Some(part)) = (split_path, part) else {
        return Ok(anns);
    };
    let manifest = split(p)?;
    let keep: HashSet<&str> = part_ids(&manifest, part).iter().map(String::as_str).collect();
    Ok(anns
        .into_iter()
        .filter(|a| keep.contains(a.conversation_id.as_str()))
        .collect())
}

fn train_only(anns: Vec<AnnotationSet>, split_path: Option<&Path>) -> Result<Vec<AnnotationSet>> {
    in_part(anns, split_path, split_path.map(|_| PartArg::Train))
}

fn synth(g: &Global, a: SynthArgs) -> Result<Outcome> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    config.seed = g.seed;
    if let Some(n) = a.train {
        config.split.train = n;
    }
    if let Some(n) = a.dev {
        config.split.dev = n;
    }
    if let Some(n) = a.test {
        config.split.test = n;
    }
    let (corpus, gold, manifest) = generate_corpus(&config)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_conversations(a.out.join("conversations.jsonl"), &corpus)?;
    write_annotations(a.out.join("gold.jsonl"), &gold)?;
    manifest.save(a.out.join("split.json"))?;
    for task in Task::ALL {
        Ontology::default_for(task).save(a.out.join(format!("ontology-{task}.json")))?;
        write_jsonl(
            a.out.join(format!("lexicon-{task}.jsonl")),
            &default_lexicon(task).entries(),
        )?;
    }
    let mut panel = 0;
    if a.labelers > 0 {
        let anns = simulate_panel(&gold, &corpus, &config.noise, a.labelers, g.seed)?;
        panel = anns.len();
        write_annotations(a.out.join("labelers.jsonl"), &anns)?;
    }
    println!(
        "{} conversations, {} gold sets, {} labeler sets written to {}",
        corpus.len(),
        gold.len(),
        panel,
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn validate(a: ValidateArgs) -> Result<Outcome> {
    let anns = annotations(&a.annotations)?;
    let onts = ontologies(&a.ontology)?;
    let mut text = String::new();
    let mut failed = false;
    if let Some(p) = &a.conversations {
        let corpus = conversations(p)?;
        let list: Vec<Ontology> = onts.values().cloned().collect();
        let issues = cross_validate(&anns, &corpus, &list);
        failed |= !issues.is_empty();
        text.push_str(&output::jsonl(&issues)?);
    }
    let violations: Vec<_> = anns
        .par_iter()
        .flat_map_iter(|ann| validate_annotation(ann, &onts[&ann.task]))
        .collect();
    let errors = violations.iter().filter(|v| v.severity == Severity::Error).count();
    failed |= errors > 0;
    text.push_str(&output::jsonl(&violations)?);
    emit(a.out.as_deref(), &text)?;
    eprintln!(
        "{} annotation sets, {} violations ({errors} errors)",
        anns.len(),
        violations.len()
    );
    Ok(if failed { Outcome::Invalid } else { Outcome::Ok })
}

fn vote(a: VoteArgs) -> Result<Outcome> {
    let anns = annotations(&a.annotations)?;
    let corpus = conversations(&a.conversations)?;
    let stats = estimate_transition_stats(&anns, &corpus);
    let voted = build_voted_reference(&anns, &corpus, &stats, a.senior.as_deref())?;
    write_annotations(&a.out, &voted)?;
    println!("{} voted annotation sets written to {}", voted.len(), a.out.display());
    Ok(Outcome::Ok)
}

fn score(g: &Global, a: ScoreArgs) -> Result<Outcome> {
    let task: Option<Task> = a.task.map(Into::into);
    let keep = |v: Vec<AnnotationSet>| -> Vec<AnnotationSet> {
        v.into_iter().filter(|x| task.is_none_or(|t| x.task == t)).collect()
    };
    let refs = keep(in_part(annotations(&a.reference)?, a.split.as_deref(), a.part)?);
    let preds = keep(in_part(annotations(&a.pred)?, a.split.as_deref(), a.part)?);
    let mode = match a.mode {
        ModeArg::Relaxed => ScoreMode::Relaxed,
        ModeArg::Strict => ScoreMode::Strict,
    };
    let key = match a.key {
        KeyArg::Tag => MatchKey::Tag,
        KeyArg::TagStatus => MatchKey::TagPlusStatus,
    };
    let (report, what): (ScoreReport, &str) = match a.granularity {
        GranularityArg::Span => (score_corpus(&refs, &preds, mode, key)?, "span"),
        GranularityArg::Conversation => {
            let ont = task.map(Ontology::default_for);
            (
                score_conversation_set(&refs, &preds, key, ont.as_ref())?,
                "conversation",
            )
        }
        GranularityArg::Relation => (score_relations_corpus(&refs, &preds), "relation"),
    };
    if let Some(p) = &a.json_out {
        emit(Some(p), &output::json(&report)?)?;
    }
    let scope = task.map_or("all".to_string(), |t| t.to_string());
    let mode_name = match mode {
        ScoreMode::Relaxed => "relaxed",
        ScoreMode::Strict => "strict",
    };
    let text = match g.format.unwrap_or(Format::Table) {
        Format::Json => output::json(&report)?,
        Format::Csv => format!(
            "task,label,precision,recall,f1,ref,pred\n{}",
            output::score_csv(&scope, &report)
        ),
        Format::Table => output::score_table(&format!("{scope}: {mode_name} {what} scores"), &report),
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.4}"))
}

fn kappa(g: &Global, a: KappaArgs) -> Result<Outcome> {
    let anns = annotations(&a.annotations)?;
    let corpus = conversations(&a.conversations)?;
    let onts = ontologies(&a.ontology)?;
    let present: BTreeSet<Task> = anns.iter().map(|x| x.task).collect();
    let reports = present
        .iter()
        .map(|t| agreement_matrix(&anns, &corpus, &onts[t]))
        .collect::<clinlabel::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.pairs.iter().map(move |p| {
                vec![
                    r.task.to_string(),
                    p.category.to_string(),
                    format!("{}-{}", p.labeler_a, p.labeler_b),
                    opt(p.agreement),
                ]
            })
        })
        .collect();
    let header = ["task", "category", "pair", "kappa"];
    let text = match g.format.unwrap_or(Format::Csv) {
        Format::Json => output::json(&reports)?,
        Format::Table => table(&header, &rows),
        Format::Csv => {
            let mut s = header.join(",") + "\n";
            for r in &rows {
                s.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}

fn qa(g: &Global, a: QaArgs) -> Result<Outcome> {
    let anns = annotations(&a.annotations)?;
    let refs = annotations(&a.reference)?;
    let scores = qa_scores(&anns, &refs)?;
    let reviewers = match a.reviewers {
        Some(k) => select_reviewers(&scores, k).map_err(|e| usage(e.to_string()))?,
        None => Vec::new(),
    };
    #[derive(Serialize)]
    struct Qa<'a> {
        scores: &'a BTreeMap<String, f64>,
        reviewers: &'a [String],
    }
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|(id, s)| vec![id.clone(), format!("{s:.4}"), reviewers.contains(id).to_string()])
        .collect();
    let header = ["labeler", "score", "reviewer"];
    let text = match g.format.unwrap_or(Format::Table) {
        Format::Json => output::json(&Qa {
            scores: &scores,
            reviewers: &reviewers,
        })?,
        Format::Table => table(&header, &rows),
        Format::Csv => {
            let mut s = header.join(",") + "\n";
            for r in &rows {
                s.push_str(&format!("{},{},{}\n", csv_field(&r[0]), r[1], r[2]));
            }
            s
        }
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}

fn prune(g: &Global, a: PruneArgs) -> Result<Outcome> {
    let task: Task = a.task.into();
    let ont = ontology_for(task, a.ontology.as_deref())?;
    let anns = annotations(&a.annotations)?;
    let corpus = conversations(&a.conversations)?;
    let counts = tag_counts(&anns, &ont);
    let kappas = tag_kappas(&anns, &corpus, &ont)?;
    let pruned = ont.prune(&counts, &kappas, a.min_count, a.min_kappa);
    pruned.ontology.save(&a.out)?;
    if let Some(p) = &a.out_annotations {
        let rewritten: Vec<AnnotationSet> = anns
            .iter()
            .map(|x| if x.task == task { pruned.apply(x) } else { x.clone() })
            .collect();
        write_annotations(p, &rewritten)?;
    }
    #[derive(Serialize)]
    struct Row {
        tag: String,
        count: u64,
        kappa: f64,
        now: Option<String>,
    }
    let rows: Vec<Row> = ont
        .entities
        .iter()
        .map(|e| Row {
            tag: e.tag.clone(),
            count: counts[&e.tag],
            kappa: kappas[&e.tag],
            now: pruned.remap.get(&e.tag).cloned().flatten(),
        })
        .collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.tag.clone(),
                r.count.to_string(),
                format!("{:.4}", r.kappa),
                r.now.clone().unwrap_or_else(|| "(removed)".into()),
            ]
        })
        .collect();
    let header = ["tag", "count", "kappa", "mapped_to"];
    let text = match g.format.unwrap_or(Format::Table) {
        Format::Json => output::json(&rows)?,
        Format::Table => table(&header, &cells),
        Format::Csv => {
            let mut s = header.join(",") + "\n";
            for c in &cells {
                s.push_str(&c.iter().map(|x| csv_field(x)).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)?;
    eprintln!(
        "{} of {} entity tags kept",
        pruned.ontology.entities.len(),
        ont.entities.len()
    );
    Ok(Outcome::Ok)
}

fn suggest_cmd(a: SuggestArgs) -> Result<Outcome> {
    let corpus = conversations(&a.conversations)?;
    let lexicon = Lexicon::load(&a.lexicon)?;
    let manifest = a.split.as_deref().map(split).transpose()?;
    let task: Task = a.task.into();
    let sets = corpus
        .conversations()
        .par_iter()
        .map(|conv| {
            let spans = match &manifest {
                Some(m) => suggest_in_split(conv, &lexicon, m)?,
                None => suggest(conv, &lexicon),
            };
            let mut set = AnnotationSet::new(conv.id.clone(), SUGGEST_LABELER, task);
            set.spans = spans;
            Ok(set)
        })
        .collect::<clinlabel::Result<Vec<_>>>()?;
    write_annotations(&a.out, &sets)?;
    let n: usize = sets.iter().map(|s| s.spans.len()).sum();
    println!(
        "{n} suggestions over {} conversations written to {}",
        sets.len(),
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn train_tagger(g: &Global, a: TrainTaggerArgs) -> Result<Outcome> {
    let task: Task = a.task.into();
    let ont = ontology_for(task, a.ontology.as_deref())?;
    let corpus = conversations(&a.conversations)?;
    let gold = train_only(annotations(&a.annotations)?, a.split.as_deref())?;
    let config = TrainConfig {
        epochs: a.epochs,
        seed: g.seed,
        filter: match a.task_filter {
            FilterArg::All => SpanFilter::All,
            FilterArg::Entities => SpanFilter::EntitiesOnly,
            FilterArg::Attributes => SpanFilter::AttributesOnly,
        },
    };
    let model = train(&gold, &corpus, &ont, &config)?;
    model.save(&a.out)?;
    println!(
        "{task} tagger: {} labels, {} features, {} training turns, written to {}",
        model.labels.len(),
        model.feature_count(),
        model.info.instances,
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn tag(a: TagArgs) -> Result<Outcome> {
    let models = a
        .model
        .iter()
        .map(|p| TaggerModel::load(p).with_context(|| format!("loading model {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let corpus = conversations(&a.conversations)?;
    let convs = selected(&corpus, a.split.as_deref(), a.part)?;
    let sets: Vec<AnnotationSet> = convs
        .par_iter()
        .flat_map_iter(|conv| models.iter().map(|m| predict(m, conv)))
        .collect();
    write_annotations(&a.out, &sets)?;
    println!("{} annotation sets written to {}", sets.len(), a.out.display());
    Ok(Outcome::Ok)
}

fn train_turns_cmd(g: &Global, a: TrainTurnsArgs) -> Result<Outcome> {
    let corpus = conversations(&a.conversations)?;
    let gold = train_only(annotations(&a.annotations)?, a.split.as_deref())?;
    let merge = a.task.map_or(MergeMode::AllTasks, |t| MergeMode::PerTask(t.into()));
    let model = train_turns(&gold, &corpus, a.epochs, g.seed, merge)?;
    model.save(&a.out)?;
    println!("turn model ({}) written to {}", merge.label(), a.out.display());
    Ok(Outcome::Ok)
}

fn detect_turns(g: &Global, a: DetectTurnsArgs) -> Result<Outcome> {
    let model = TurnModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let corpus = conversations(&a.conversations)?;
    let convs = selected(&corpus, a.split.as_deref(), a.part)?;
    let predicted: BTreeMap<String, Vec<TurnClasses>> = convs
        .par_iter()
        .map(|c| (c.id.clone(), predict_turns(&model, c)))
        .collect();
    if let Some(p) = &a.out {
        #[derive(Serialize)]
        struct Line<'a> {
            conversation_id: &'a str,
            turns: &'a [TurnClasses],
        }
        let lines: Vec<Line> = convs
            .iter()
            .map(|c| Line {
                conversation_id: &c.id,
                turns: &predicted[&c.id],
            })
            .collect();
        emit(Some(p), &output::jsonl(&lines)?)?;
    }
    let Some(gold_path) = &a.gold else {
        return Ok(Outcome::Ok);
    };
    let ids: HashSet<&str> = convs.iter().map(|c| c.id.as_str()).collect();
    let in_scope = |v: Vec<AnnotationSet>| -> Vec<AnnotationSet> {
        v.into_iter()
            .filter(|x| ids.contains(x.conversation_id.as_str()) && model.merge.admits(x.task))
            .collect()
    };
    let gold = in_scope(annotations(gold_path)?);
    let gold_map = gold_turn_classes(&gold, &corpus, model.merge)?;
    let mut evals = vec![("turns", eval_turns(&predicted, &gold_map)?)];
    if let Some(p) = &a.compare {
        let tagged = in_scope(annotations(p)?);
        let mut by_conv: BTreeMap<&str, Vec<&AnnotationSet>> = BTreeMap::new();
        for t in &tagged {
            by_conv.entry(&t.conversation_id).or_default().push(t);
        }
        let projected: BTreeMap<String, Vec<TurnClasses>> = convs
            .iter()
            .map(|c| {
                let anns = by_conv.get(c.id.as_str()).cloned().unwrap_or_default();
                (c.id.clone(), project_turn_classes(anns, c.turns.len()))
            })
            .collect();
        evals.push(("tagger", eval_turns(&projected, &gold_map)?));
    }
    let label = model.merge.label();
    let text = match g.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let m: BTreeMap<&str, _> = evals.iter().map(|(k, e)| (*k, e)).collect();
            output::json(&m)?
        }
        Format::Csv => {
            let rows: Vec<(&str, &str, _)> = evals.iter().map(|(m, e)| (label, *m, e)).collect();
            turn_eval_csv(&rows)
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = evals
                .iter()
                .flat_map(|(m, e)| {
                    e.per_class
                        .iter()
                        .map(move |(c, s)| vec![label.to_string(), c.to_string(), m.to_string(), s.to_string()])
                })
                .collect();
            table(&["task", "class", "model", "F1 (P, R)"], &rows)
        }
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}

type Pair<'a> = (Option<&'a AnnotationSet>, Option<&'a AnnotationSet>);

fn errors_align(a: AlignArgs) -> Result<Outcome> {
    let refs = in_part(annotations(&a.reference)?, a.split.as_deref(), a.part)?;
    let preds = in_part(annotations(&a.pred)?, a.split.as_deref(), a.part)?;
    let corpus = a.conversations.as_deref().map(conversations).transpose()?;
    let task: Option<Task> = a.task.map(Into::into);
    let (refs, preds): (Vec<_>, Vec<_>) = match task {
        Some(t) => (
            refs.into_iter().filter(|r| r.task == t).collect(),
            preds.into_iter().filter(|p| p.task == t).collect(),
        ),
        None => (refs, preds),
    };
    let mut pairs: BTreeMap<(String, Task), Pair> = BTreeMap::new();
    for r in &refs {
        pairs.entry((r.conversation_id.clone(), r.task)).or_default().0 = Some(r);
    }
    for p in &preds {
        pairs.entry((p.conversation_id.clone(), p.task)).or_default().1 = Some(p);
    }
    let jobs: Vec<(AnnotationSet, AnnotationSet)> = pairs
        .into_iter()
        .map(|((conv, task), (r, p))| {
            let empty = |who: &str| AnnotationSet::new(conv.clone(), who, task);
            (
                r.cloned().unwrap_or_else(|| empty("")),
                p.cloned().unwrap_or_else(|| empty("")),
            )
        })
        .collect();
    let records = jobs
        .par_iter()
        .map(|(r, p)| {
            let conv = match &corpus {
                Some(c) => Some(c.require(&r.conversation_id)?),
                None => None,
            };
            align_errors(r, p, conv)
        })
        .collect::<clinlabel::Result<Vec<_>>>()?
        .concat();
    write_jsonl(&a.out, &records)?;
    let count = |t| records.iter().filter(|r| r.error_type == t).count();
    println!(
        "{} error records ({} deletions, {} insertions, {} substitutions) written to {}",
        records.len(),
        count(ErrorType::Deletion),
        count(ErrorType::Insertion),
        count(ErrorType::Substitution),
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn errors_annotate(g: &Global, a: AnnotateArgs) -> Result<Outcome> {
    let mut records: Vec<ErrorRecord> = read_jsonl(&a.records)?;
    let timestamp = g.timestamp.clone().unwrap_or_else(output::now_rfc3339);
    let updated = record_category(&mut records, &a.id, &a.cause, &a.relevance, &a.rater, &timestamp)?;
    println!(
        "{}: {} / {}",
        updated.record_id,
        updated.error_cause.map_or(String::new(), |c| c.to_string()),
        updated.clinical_relevance.map_or(String::new(), |r| r.to_string())
    );
    write_jsonl(a.out.as_deref().unwrap_or(&a.records), &records)?;
    Ok(Outcome::Ok)
}

fn errors_report(g: &Global, a: ReportArgs) -> Result<Outcome> {
    let records: Vec<ErrorRecord> = read_jsonl(&a.records)?;
    let report = aggregate_report(&records);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (t, n) in &report.by_type {
        rows.push(vec![
            "type".into(),
            t.to_string(),
            n.to_string(),
            format!("{:.4}", *n as f64 / report.total.max(1) as f64),
        ]);
    }
    for (c, p) in &report.by_cause {
        rows.push(vec!["cause".into(), c.to_string(), String::new(), format!("{p:.4}")]);
    }
    for (r, p) in &report.by_relevance {
        rows.push(vec![
            "relevance".into(),
            r.to_string(),
            String::new(),
            format!("{p:.4}"),
        ]);
    }
    let header = ["dimension", "value", "count", "proportion"];
    let text = match g.format.unwrap_or(Format::Table) {
        Format::Json => output::json(&report)?,
        Format::Table => format!(
            "{} records, {} uncategorized\n{}",
            report.total,
            report.uncategorized,
            table(&header, &rows)
        ),
        Format::Csv => {
            let mut s = header.join(",") + "\n";
            for r in &rows {
                s.push_str(&r.iter().map(|x| csv_field(x)).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}

fn stats(g: &Global, a: StatsArgs) -> Result<Outcome> {
    let anns = annotations(&a.annotations)?;
    let corpus = a.conversations.as_deref().map(conversations).transpose()?;
    let stats = annotation_stats(&anns, corpus.as_ref(), a.unique)?;
    let mut header = vec![
        "task",
        "sets",
        "conversations",
        "spans",
        "relations",
        "spans/conv",
        "relations/conv",
    ];
    if a.unique {
        header.push("unique_spans");
    }
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            let mut r = vec![
                s.task.to_string(),
                s.annotation_sets.to_string(),
                s.conversations.to_string(),
                s.spans.to_string(),
                s.relations.to_string(),
                format!("{:.2}", s.spans_per_conversation),
                format!("{:.2}", s.relations_per_conversation),
            ];
            if let Some(u) = s.unique_spans {
                r.push(u.to_string());
            }
            r
        })
        .collect();
    let text = match g.format.unwrap_or(Format::Table) {
        Format::Json => output::json(&stats)?,
        Format::Table => table(&header, &rows),
        Format::Csv => {
            let mut s = header.join(",") + "\n";
            for r in &rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)?;
    Ok(Outcome::Ok)
}
