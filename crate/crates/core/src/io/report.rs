//! Evaluation reports as JSON or CSV, and the incremental curve table.
//!
//! JSON:
//! `{"id_accuracy": f, "ood": [{"name", "fpr95", "auroc", "threshold"}], "average": {...}}`
//!
//! CSV: `name,id_accuracy,fpr95,auroc,threshold`, one row per OOD set and a
//! final `average` row.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::write_bytes;
use crate::error::Result;
use crate::extension::CurvePoint;
use crate::metrics::{EvalReport, MetricsReport};

#[derive(Serialize)]
struct OodEntry<'a> {
    name: &'a str,
    fpr95: f64,
    auroc: f64,
    threshold: f64,
}

impl<'a> From<&'a MetricsReport> for OodEntry<'a> {
    fn from(m: &'a MetricsReport) -> Self {
        OodEntry { name: &m.name, fpr95: m.fpr_at_tpr, auroc: m.auroc, threshold: m.threshold }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    id_accuracy: f64,
    ood: Vec<OodEntry<'a>>,
    average: OodEntry<'a>,
}

pub fn report_json(report: &EvalReport) -> Result<String> {
    let doc = JsonReport {
        id_accuracy: report.id_accuracy,
        ood: report.ood.iter().map(OodEntry::from).collect(),
        average: (&report.average).into(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("name,id_accuracy,fpr95,auroc,threshold\n");
    for m in report.ood.iter().chain(std::iter::once(&report.average)) {
        let _ = writeln!(s, "{},{},{},{},{}", m.name, report.id_accuracy, m.fpr_at_tpr, m.auroc, m.threshold);
    }
    s
}

/// Writes JSON when the path ends in `.json`, CSV otherwise.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = if path.extension().is_some_and(|e| e == "json") { report_json(report)? } else { report_csv(report) };
    write_bytes(path, body.as_bytes())
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("cumulative_categories,accuracy,fpr95,auroc\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.cumulative_categories, p.accuracy, p.fpr95, p.auroc);
    }
    s
}
