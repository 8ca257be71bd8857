use std::path::Path;

use absa_core::{EvalMode, MetricReport};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub backbone: String,
    pub mode: EvalMode,
    pub f1_micro: f64,
    pub f1_macro: f64,
}

/// One row per sentiment report in `dir`, ordered by backbone then mode.
pub fn collect(dir: &Path) -> Result<Vec<Row>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut rows = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let report: MetricReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Some(mode) = report.provenance.mode.as_deref().and_then(|m| m.parse::<EvalMode>().ok()) else {
            continue;
        };
        let metric = |k: &str| report.get(k).with_context(|| format!("{} has no {k}", path.display()));
        rows.push(Row {
            backbone: report.provenance.backbone.clone().unwrap_or_else(|| "unknown".into()),
            mode,
            f1_micro: metric("f1_micro")?,
            f1_macro: metric("f1_macro")?,
        });
    }
    if rows.is_empty() {
        bail!("no mode reports found in {}", dir.display());
    }
    let order = |m: EvalMode| EvalMode::ALL_MODES.iter().position(|x| *x == m);
    rows.sort_by(|a, b| a.backbone.cmp(&b.backbone).then(order(a.mode).cmp(&order(b.mode))));
    Ok(rows)
}

pub fn render_text(rows: &[Row]) -> String {
    let width = rows.iter().map(|r| r.backbone.len()).max().unwrap_or(0).max("backbone".len());
    let mut out = format!("{:<width$}  {:<9}  {:>8}  {:>8}\n", "backbone", "mode", "F1-micro", "F1-macro");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:<9}  {:>8.4}  {:>8.4}\n",
            r.backbone,
            r.mode.as_str(),
            r.f1_micro,
            r.f1_macro
        ));
    }
    out
}

pub fn render_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
pub fn parse_csv(text: &str) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
