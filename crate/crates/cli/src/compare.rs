//! Mode comparison: per-turn median deltas between every ordered pair of
//! modes in a report.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use discedge_core::protocol::ContextMode;
use serde::Serialize;
use thiserror::Error;

use crate::report::{median, Report, METRICS};

#[derive(Debug, Error, PartialEq)]
pub enum ComparisonError {
    #[error("comparison needs at least two modes, report has {0}")]
    TooFewModes(usize),
}

/// `delta_pct` is the change from `base` to `other`, relative to `base`.
/// `turn` is empty for whole-run rows: the median over turns for per-turn
/// metrics, and quiesced totals for sync bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub base: ContextMode,
    pub other: ContextMode,
    pub turn: Option<u32>,
    pub node: String,
    pub base_median: f64,
    pub other_median: f64,
    pub delta_pct: f64,
}

fn delta_pct(base: f64, other: f64) -> f64 {
    if base == other {
        0.0
    } else {
        (other - base) / base * 100.0
    }
}

pub fn compare_modes(report: &Report) -> Result<Vec<ComparisonRow>, ComparisonError> {
    if report.modes.len() < 2 {
        return Err(ComparisonError::TooFewModes(report.modes.len()));
    }
    let node_of = |turn: u32| {
        report.turns.iter().find(|t| t.turn == turn).map(|t| t.node.clone()).unwrap_or_default()
    };
    let mut rows = Vec::new();
    for &base in &report.modes {
        for &other in report.modes.iter().filter(|m| **m != base) {
            for metric in METRICS {
                let b = report.per_turn_median(base, metric);
                let o = report.per_turn_median(other, metric);
                let mut deltas = Vec::new();
                for (turn, bv) in &b {
                    let Some(ov) = o.get(turn) else { continue };
                    let d = delta_pct(*bv, *ov);
                    deltas.push(d);
                    rows.push(ComparisonRow {
                        metric: metric.into(),
                        base,
                        other,
                        turn: Some(*turn),
                        node: node_of(*turn),
                        base_median: *bv,
                        other_median: *ov,
                        delta_pct: d,
                    });
                }
                if let Some(d) = median(&deltas) {
                    rows.push(ComparisonRow {
                        metric: metric.into(),
                        base,
                        other,
                        turn: None,
                        node: "all".into(),
                        base_median: median(&b.values().copied().collect::<Vec<_>>()).unwrap_or(0.0),
                        other_median: median(&o.values().copied().collect::<Vec<_>>()).unwrap_or(0.0),
                        delta_pct: d,
                    });
                }
            }
            if let (Some(b), Some(o)) = (report.sync_total_median(base), report.sync_total_median(other)) {
                rows.push(ComparisonRow {
                    metric: "sync_bytes".into(),
                    base,
                    other,
                    turn: None,
                    node: "all".into(),
                    base_median: b,
                    other_median: o,
                    delta_pct: delta_pct(b, o),
                });
            }
        }
    }
    Ok(rows)
}

/// Markdown table of the whole-run rows.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| metric | base | other | base median | other median | delta % |\n|:---|:---|:---|---:|---:|---:|\n");
    for r in rows.iter().filter(|r| r.turn.is_none()) {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {:.2} | {:+.2} |",
            r.metric,
            r.base.as_str(),
            r.other.as_str(),
            r.base_median,
            r.other_median,
            r.delta_pct
        );
    }
    out
}

/// Reads a report directory, writes `comparison.csv` and `comparison.md`
/// next to it and returns the rows.
pub fn compare_dir(dir: impl AsRef<Path>) -> Result<Vec<ComparisonRow>> {
    let dir = dir.as_ref();
    let report = Report::read(dir)?;
    let rows = compare_modes(&report)?;
    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(dir.join("comparison.md"), render_table(&rows))?;
    Ok(rows)
}
