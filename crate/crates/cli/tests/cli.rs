use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clinlabel"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(
        &dir,
        &[
            "--seed", "4", "synth", "--out", "data", "--train", "30", "--dev", "8", "--test", "4",
        ],
    );
    (tmp, dir)
}

#[test]
fn synth_writes_every_file_and_is_reproducible() {
    let (_tmp, dir) = corpus();
    for f in [
        "conversations.jsonl",
        "gold.jsonl",
        "labelers.jsonl",
        "split.json",
        "ontology-symptoms.json",
        "lexicon-conditions.jsonl",
    ] {
        assert!(dir.join("data").join(f).exists(), "{f} missing");
    }
    ok(
        &dir,
        &[
            "--seed", "4", "synth", "--out", "again", "--train", "30", "--dev", "8", "--test", "4",
        ],
    );
    for f in ["conversations.jsonl", "gold.jsonl", "labelers.jsonl", "split.json"] {
        assert_eq!(
            fs::read(dir.join("data").join(f)).unwrap(),
            fs::read(dir.join("again").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let split: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("data/split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 30);
}

#[test]
fn validate_exit_codes() {
    let (_tmp, dir) = corpus();
    let clean = run(
        &dir,
        &[
            "validate",
            "--annotations",
            "data/gold.jsonl",
            "--conversations",
            "data/conversations.jsonl",
        ],
    );
    assert_eq!(clean.status.code(), Some(0));
    assert!(clean.stdout.is_empty());
    let noisy = run(&dir, &["validate", "--annotations", "data/labelers.jsonl"]);
    assert_eq!(noisy.status.code(), Some(1));
    let first = String::from_utf8(noisy.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(v["rule_id"].as_str().unwrap().starts_with('R'));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(tmp.path(), &["score", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        run(tmp.path(), &["--workers", "0", "stats", "--annotations", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(tmp.path(), &["stats", "--annotations", "missing.jsonl"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn vote_then_score_table_and_json() {
    let (_tmp, dir) = corpus();
    ok(
        &dir,
        &[
            "vote",
            "--annotations",
            "data/labelers.jsonl",
            "--conversations",
            "data/conversations.jsonl",
            "--out",
            "voted.jsonl",
        ],
    );
    let voted = fs::read_to_string(dir.join("voted.jsonl")).unwrap();
    assert!(voted.lines().all(|l| l.contains("\"labeler_id\":\"VOTED\"")));
    let table = ok(
        &dir,
        &[
            "score",
            "--ref",
            "data/gold.jsonl",
            "--pred",
            "voted.jsonl",
            "--mode",
            "relaxed",
            "--granularity",
            "span",
            "--json-out",
            "report.json",
        ],
    );
    assert!(table.contains("Performance F1 (Precision, Recall)"));
    assert!(table.lines().any(|l| l.starts_with("Overall")));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    let f1 = report["overall"]["f1"].as_f64().unwrap();
    assert!(f1 > 0.5 && f1 <= 1.0);
    let same = ok(
        &dir,
        &[
            "score",
            "--ref",
            "data/gold.jsonl",
            "--pred",
            "data/gold.jsonl",
            "--format",
            "json",
        ],
    );
    let same: serde_json::Value = serde_json::from_str(&same).unwrap();
    assert_eq!(same["overall"]["f1"].as_f64(), Some(1.0));
}

#[test]
fn kappa_qa_prune_stats() {
    let (_tmp, dir) = corpus();
    let csv = ok(
        &dir,
        &[
            "kappa",
            "--annotations",
            "data/labelers.jsonl",
            "--conversations",
            "data/conversations.jsonl",
        ],
    );
    assert!(csv.starts_with("task,category,pair,kappa\n"));
    assert!(csv.contains("symptoms,entities,L1-L2,"));
    let qa = ok(
        &dir,
        &[
            "qa",
            "--annotations",
            "data/labelers.jsonl",
            "--ref",
            "data/gold.jsonl",
            "--reviewers",
            "2",
            "--format",
            "json",
        ],
    );
    let qa: serde_json::Value = serde_json::from_str(&qa).unwrap();
    assert_eq!(qa["reviewers"].as_array().unwrap().len(), 2);
    assert_eq!(
        run(
            &dir,
            &[
                "qa",
                "--annotations",
                "data/labelers.jsonl",
                "--ref",
                "data/gold.jsonl",
                "--reviewers",
                "9"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    ok(
        &dir,
        &[
            "prune",
            "--annotations",
            "data/labelers.jsonl",
            "--conversations",
            "data/conversations.jsonl",
            "--task",
            "symptoms",
            "--min-count",
            "1000000",
            "--min-kappa",
            "0",
            "--out",
            "pruned.json",
            "--out-annotations",
            "pruned.jsonl",
        ],
    );
    let pruned: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("pruned.json")).unwrap()).unwrap();
    assert!(pruned["entities"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e["tag"].as_str().unwrap().ends_with(":Other")));
    let status = run(
        &dir,
        &["validate", "--annotations", "pruned.jsonl", "--ontology", "pruned.json"],
    );
    let out = String::from_utf8(status.stdout).unwrap();
    assert!(!out.contains("\"R4\""), "pruned annotations use unknown tags");
    let stats = ok(
        &dir,
        &[
            "stats",
            "--annotations",
            "data/gold.jsonl",
            "--unique",
            "--format",
            "json",
        ],
    );
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats.as_array().unwrap().len(), 3);
    assert!(stats[0]["unique_spans"].as_u64().unwrap() > 0);
}

#[test]
fn tagger_pipeline_is_deterministic_across_workers() {
    let (_tmp, dir) = corpus();
    let train = |out: &str| {
        ok(
            &dir,
            &[
                "--seed",
                "2",
                "train-tagger",
                "--annotations",
                "data/gold.jsonl",
                "--conversations",
                "data/conversations.jsonl",
                "--task",
                "medications",
                "--split",
                "data/split.json",
                "--epochs",
                "3",
                "--out",
                out,
            ],
        )
    };
    train("m1.json");
    train("m2.json");
    assert_eq!(
        fs::read(dir.join("m1.json")).unwrap(),
        fs::read(dir.join("m2.json")).unwrap()
    );
    let tag = |workers: &str, out: &str| {
        ok(
            &dir,
            &[
                "--workers",
                workers,
                "tag",
                "--model",
                "m1.json",
                "--conversations",
                "data/conversations.jsonl",
                "--split",
                "data/split.json",
                "--part",
                "dev",
                "--out",
                out,
            ],
        )
    };
    tag("1", "t1.jsonl");
    tag("4", "t4.jsonl");
    let t1 = fs::read_to_string(dir.join("t1.jsonl")).unwrap();
    assert_eq!(t1, fs::read_to_string(dir.join("t4.jsonl")).unwrap());
    assert_eq!(t1.lines().count(), 8);
    let csv = ok(
        &dir,
        &[
            "score",
            "--ref",
            "data/gold.jsonl",
            "--pred",
            "t1.jsonl",
            "--task",
            "medications",
            "--split",
            "data/split.json",
            "--part",
            "dev",
            "--format",
            "csv",
        ],
    );
    let overall = csv.lines().find(|l| l.starts_with("medications,overall,")).unwrap();
    let f1: f64 = overall.split(',').nth(4).unwrap().parse().unwrap();
    assert!(f1 > 0.5, "{overall}");
    let align = |extra: &[&str]| {
        let mut args = vec![
            "errors",
            "align",
            "--ref",
            "data/gold.jsonl",
            "--pred",
            "t1.jsonl",
            "--split",
            "data/split.json",
        ];
        args.extend_from_slice(&["--part", "dev", "--out", "e.jsonl"]);
        args.extend_from_slice(extra);
        ok(&dir, &args);
        fs::read_to_string(dir.join("e.jsonl")).unwrap().lines().count()
    };
    let all_tasks = align(&[]);
    let medications = align(&["--task", "medications"]);
    assert!(medications < all_tasks, "{medications} vs {all_tasks}");
}

#[test]
fn turn_detection_csv() {
    let (_tmp, dir) = corpus();
    ok(
        &dir,
        &[
            "train-turns",
            "--annotations",
            "data/gold.jsonl",
            "--conversations",
            "data/conversations.jsonl",
            "--split",
            "data/split.json",
            "--out",
            "turns.json",
        ],
    );
    let csv = ok(
        &dir,
        &[
            "detect-turns",
            "--model",
            "turns.json",
            "--conversations",
            "data/conversations.jsonl",
            "--split",
            "data/split.json",
            "--part",
            "dev",
            "--gold",
            "data/gold.jsonl",
            "--out",
            "pred.jsonl",
        ],
    );
    assert!(csv.starts_with("task,class,model,precision,recall,f1\n"));
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(fs::read_to_string(dir.join("pred.jsonl")).unwrap().lines().count(), 8);
}

#[test]
fn error_workflow() {
    let (_tmp, dir) = corpus();
    ok(
        &dir,
        &[
            "vote",
            "--annotations",
            "data/labelers.jsonl",
            "--conversations",
            "data/conversations.jsonl",
            "--out",
            "voted.jsonl",
        ],
    );
    ok(
        &dir,
        &[
            "errors",
            "align",
            "--ref",
            "data/gold.jsonl",
            "--pred",
            "voted.jsonl",
            "--conversations",
            "data/conversations.jsonl",
            "--out",
            "err.jsonl",
        ],
    );
    let records = fs::read_to_string(dir.join("err.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    let id = first["record_id"].as_str().unwrap().to_string();
    ok(
        &dir,
        &[
            "--timestamp",
            "2026-01-01T00:00:00Z",
            "errors",
            "annotate",
            "--records",
            "err.jsonl",
            "--id",
            &id,
            "--cause",
            "Fail to use context",
            "--relevance",
            "relevant",
            "--rater",
            "r1",
        ],
    );
    let updated = fs::read_to_string(dir.join("err.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(updated.lines().next().unwrap()).unwrap();
    assert_eq!(rec["error_cause"], "FailToUseContext");
    assert_eq!(rec["audit"][0]["timestamp"], "2026-01-01T00:00:00Z");
    let bad = run(
        &dir,
        &[
            "errors",
            "annotate",
            "--records",
            "err.jsonl",
            "--id",
            &id,
            "--cause",
            "Bogus",
            "--relevance",
            "NA",
            "--rater",
            "r1",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
    let report = ok(
        &dir,
        &["errors", "report", "--records", "err.jsonl", "--format", "json"],
    );
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["total"].as_u64().unwrap() as usize, updated.lines().count());
    assert_eq!(report["by_cause"]["FailToUseContext"].as_f64(), Some(1.0));
}

#[test]
fn suggest_respects_split() {
    let (_tmp, dir) = corpus();
    let refused = run(
        &dir,
        &[
            "suggest",
            "--conversations",
            "data/conversations.jsonl",
            "--lexicon",
            "data/lexicon-conditions.jsonl",
            "--task",
            "conditions",
            "--split",
            "data/split.json",
            "--out",
            "s.jsonl",
        ],
    );
    assert_eq!(refused.status.code(), Some(1));
    ok(
        &dir,
        &[
            "suggest",
            "--conversations",
            "data/conversations.jsonl",
            "--lexicon",
            "data/lexicon-conditions.jsonl",
            "--task",
            "conditions",
            "--out",
            "s.jsonl",
        ],
    );
    let text = fs::read_to_string(dir.join("s.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 42);
    assert!(text.contains("Condition:Patient"));
}
