//! Metric reports as JSON and as an aligned text table (percentages).

use std::fmt::Write as _;
use std::path::Path;

use argmine_core::evaluator::TaskScores;
use argmine_core::MetricsReport;
use serde::Serialize;

use crate::checkpoint::write_atomic;
use crate::error::Result;

#[derive(Serialize)]
struct TaskJson<'a> {
    macro_f1: f64,
    per_class: std::collections::BTreeMap<&'a str, f64>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    actc: TaskJson<'a>,
    ari: TaskJson<'a>,
    artc: TaskJson<'a>,
    avg: f64,
}

fn task_json(t: &TaskScores) -> TaskJson<'_> {
    TaskJson {
        macro_f1: t.macro_f1,
        per_class: t.per_class.iter().map(|(n, f)| (n.as_str(), *f)).collect(),
    }
}

pub fn report_json(report: &MetricsReport) -> String {
    let json = ReportJson {
        actc: task_json(&report.actc),
        ari: task_json(&report.ari),
        artc: task_json(&report.artc),
        avg: report.avg,
    };
    serde_json::to_string_pretty(&json).expect("reports serialize") + "\n"
}

/// One header row and one value row per task, then the cross-task average.
pub fn report_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    for (task, scores) in [("ACTC", &report.actc), ("ARI", &report.ari), ("ARTC", &report.artc)] {
        let mut header = vec!["Macro".to_string()];
        let mut values = vec![format!("{:.2}", 100.0 * scores.macro_f1)];
        for (name, f1) in &scores.per_class {
            header.push(name.clone());
            values.push(format!("{:.2}", 100.0 * f1));
        }
        let widths: Vec<usize> = header.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
        let row = |label: &str, cells: &[String]| {
            let mut line = format!("{label:<6}");
            for (cell, w) in cells.iter().zip(&widths) {
                let _ = write!(line, "  {cell:>w$}");
            }
            line
        };
        out.push_str(&row(task, &header));
        out.push('\n');
        out.push_str(&row("", &values));
        out.push_str("\n\n");
    }
    let _ = writeln!(out, "{:<6}  {:.2}", "AVG", 100.0 * report.avg);
    out
}

/// Writes `<stem>.json` and `<stem>.txt` into `dir`.
pub fn save_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.json")), report_json(report).as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.txt")), report_table(report).as_bytes())
}
