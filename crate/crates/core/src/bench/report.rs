//! JSON, CSV and Markdown renderings of benchmark results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::harness::{AblationRow, FrameSweepRow, KnnBenchmarkReport, TripletReport};
use super::manifest::{Category, ManifestKind};
use super::BenchError;
use crate::knn::KnnReport;

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn category_cell(report: &TripletReport, category: Category) -> String {
    report
        .categories
        .iter()
        .find(|c| c.category == category)
        .map(|c| pct(c.accuracy))
        .unwrap_or_else(|| "-".into())
}

pub fn triplet_markdown(reports: &[TripletReport]) -> String {
    let synthetic = reports
        .iter()
        .all(|r| r.kind == ManifestKind::TripletSynthetic);
    let mut out = String::new();
    if synthetic {
        out.push_str("| Method |");
        for c in Category::ALL {
            out.push_str(&format!(" {} |", c.as_str()));
        }
        out.push_str(" Avg |\n|---|---|---|---|---|---|---|\n");
        for r in reports {
            out.push_str(&format!("| {} |", r.label));
            for c in Category::ALL {
                out.push_str(&format!(" {} |", category_cell(r, c)));
            }
            out.push_str(&format!(" {} |\n", pct(r.average)));
        }
    } else {
        out.push_str("| Method | Accuracy |\n|---|---|\n");
        for r in reports {
            out.push_str(&format!("| {} | {} |\n", r.label, pct(r.average)));
        }
    }
    out
}

pub fn triplet_csv(reports: &[TripletReport]) -> String {
    let mut out = String::from(
        "label,config,static,dyn_app,dyn_obj,view,style,average,correct,total,failures\n",
    );
    for r in reports {
        let cell = |c: Category| {
            r.categories
                .iter()
                .find(|a| a.category == c)
                .map(|a| format!("{:.6}", a.accuracy))
                .unwrap_or_default()
        };
        let cells: Vec<String> = Category::ALL.iter().map(|&c| cell(c)).collect();
        out.push_str(&format!(
            "{},\"{}\",{},{:.6},{},{},{}\n",
            r.label,
            r.config,
            cells.join(","),
            r.average,
            r.correct,
            r.total,
            r.failures.len()
        ));
    }
    out
}

pub fn knn_csv(report: &KnnBenchmarkReport) -> String {
    format!(
        "label,{}\n{},{}\n",
        KnnReport::CSV_HEADER,
        report.label,
        report.report.csv_row()
    )
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Configuration | Accuracy |\n|---|---|\n");
    for r in rows {
        let cell = match (&r.accuracy, &r.error) {
            (Some(a), _) => pct(*a),
            (None, Some(e)) => format!("failed: {e}"),
            (None, None) => "-".into(),
        };
        out.push_str(&format!("| {} | {} |\n", r.label, cell));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("label,config,accuracy,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},\"{}\",{},\"{}\"\n",
            r.label,
            r.config,
            r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace('"', "\"\"")
        ));
    }
    out
}

/// One row per method, one column per frame count.
pub fn frame_sweep_markdown(label: &str, rows: &[FrameSweepRow]) -> String {
    let mut out = String::from("| Method |");
    let mut rule = String::from("|---|");
    for r in rows {
        out.push_str(&format!(" {} |", r.frames));
        rule.push_str("---|");
    }
    out.push('\n');
    out.push_str(&rule);
    out.push_str(&format!("\n| {label} |"));
    for r in rows {
        out.push_str(&format!(" {} |", pct(r.accuracy)));
    }
    out.push('\n');
    out
}

pub fn frame_sweep_csv(rows: &[FrameSweepRow]) -> String {
    let mut out = String::from("frames,accuracy,correct,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            r.frames, r.accuracy, r.correct, r.total
        ));
    }
    out
}

/// Writes `<stem>.json`, `<stem>.csv` and `<stem>.md` into `out_dir`.
pub fn write_report<T: Serialize + ?Sized>(
    out_dir: &Path,
    stem: &str,
    full: &T,
    csv: &str,
    markdown: &str,
) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(out_dir)?;
    let json =
        serde_json::to_string_pretty(full).map_err(|e| BenchError::InvalidParams(e.to_string()))?;
    let paths = [
        ("json", json),
        ("csv", csv.to_owned()),
        ("md", markdown.to_owned()),
    ]
    .into_iter()
    .map(|(ext, body)| {
        let path = out_dir.join(format!("{stem}.{ext}"));
        fs::write(&path, body)?;
        Ok(path)
    })
    .collect::<Result<Vec<_>, std::io::Error>>()?;
    Ok(paths)
}
