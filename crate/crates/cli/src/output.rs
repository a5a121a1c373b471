use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clinlabel::score::ScoreReport;
use serde::Serialize;

/// Write `text` to a file, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn jsonl<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Left-aligned columns separated by two spaces, with a rule under the
/// header.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// One row per label plus an overall row, each cell `F1 (P, R)`.
pub fn score_table(title: &str, report: &ScoreReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .per_label
        .iter()
        .map(|(label, s)| vec![label.clone(), s.to_string(), s.n.to_string(), s.m.to_string()])
        .collect();
    let o = &report.overall;
    rows.push(vec!["Overall".into(), o.to_string(), o.n.to_string(), o.m.to_string()]);
    let header = ["Label", "Performance F1 (Precision, Recall)", "Ref", "Pred"];
    format!("{title}\n{}", table(&header, &rows))
}

pub fn score_csv(task: &str, report: &ScoreReport) -> String {
    let mut out = String::new();
    let rows = report
        .per_label
        .iter()
        .map(|(l, s)| (l.as_str(), s))
        .chain(std::iter::once(("overall", &report.overall)));
    for (label, s) in rows {
        out.push_str(&format!(
            "{task},{},{:.4},{:.4},{:.4},{},{}\n",
            csv_field(label),
            s.precision,
            s.recall,
            s.f1,
            s.n,
            s.m
        ));
    }
    out
}

pub fn now_rfc3339() -> String {
    humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
}
