//! Accuracy tables over verification results: one row per template, one
//! accuracy column per model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use syntheval_core::verify::TemplateResult;

use crate::store::{read_json, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

struct Row<'a> {
    template: &'a str,
    test_type: &'a str,
    gold_label: &'a str,
    by_model: BTreeMap<&'a str, f64>,
}

/// Rows in first-appearance order of templates; model columns sorted.
fn pivot(results: &[TemplateResult]) -> (Vec<&str>, Vec<Row<'_>>) {
    let models: BTreeSet<&str> = results.iter().map(|r| r.model_id.as_str()).collect();
    let mut rows: Vec<Row> = Vec::new();
    for r in results {
        let idx = match rows.iter().position(|row| row.template == r.template_name) {
            Some(i) => i,
            None => {
                rows.push(Row {
                    template: &r.template_name,
                    test_type: &r.test_type,
                    gold_label: &r.gold_label,
                    by_model: BTreeMap::new(),
                });
                rows.len() - 1
            }
        };
        rows[idx].by_model.insert(&r.model_id, r.accuracy_pct);
    }
    (models.into_iter().collect(), rows)
}

fn markdown(results: &[TemplateResult]) -> String {
    let (models, rows) = pivot(results);
    let mut out = String::from("| Template | Test type | Gold label |");
    for m in &models {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---:|".repeat(models.len()));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} | {} | {} |", row.template, row.test_type, row.gold_label);
        for m in &models {
            match row.by_model.get(m) {
                Some(acc) => {
                    let _ = write!(out, " {acc:.2} |");
                }
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}

fn csv(results: &[TemplateResult]) -> String {
    let (models, rows) = pivot(results);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["template", "test_type", "gold_label"];
    header.extend(models.iter().copied());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut record = vec![row.template.to_string(), row.test_type.to_string(), row.gold_label.to_string()];
        record.extend(models.iter().map(|m| row.by_model.get(m).map(|a| a.to_string()).unwrap_or_default()));
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Markdown and CSV carry the accuracy table; JSON is the full results.
/// Markdown rounds to two decimals, the other formats keep full precision.
pub fn render_report(results: &[TemplateResult], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(results),
        ReportFormat::Csv => csv(results),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(results).expect("results serialize");
            s.push('\n');
            s
        }
    }
}

/// Every `*.json` result in `dir`, sorted by file name.
pub fn load_results(dir: impl AsRef<Path>) -> Result<Vec<TemplateResult>, StoreError> {
    let dir = dir.as_ref();
    let read = std::fs::read_dir(dir).map_err(|source| StoreError::Io { path: dir.into(), source })?;
    let mut paths = Vec::new();
    for entry in read {
        let path = entry.map_err(|source| StoreError::Io { path: dir.into(), source })?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(read_json).collect()
}
