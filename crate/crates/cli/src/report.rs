//! Metrics report: one CSV per metric, full per-turn rows, per-run totals
//! and a Markdown summary. Nothing time-of-day dependent is written, so two
//! simulated runs of one config produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use discedge_core::engine::hash64;
use discedge_core::protocol::ContextMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Sim,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub mode: ContextMode,
    pub repeat: u32,
    /// 1-based position of the message in the scenario.
    pub turn: u32,
    /// Turn counter carried by the request; lags `turn` after a failure.
    pub request_turn: u64,
    pub node: String,
    pub ok: bool,
    pub error: String,
    pub consistency: String,
    pub retries: u32,
    pub response_time_ms: f64,
    pub tokenize_ms: f64,
    pub inference_ms: f64,
    pub tps: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub tokens_generated: u32,
    /// Node-to-node sync bytes sent so far in this run, all pairs.
    pub sync_bytes: u64,
    pub fingerprint: String,
    #[serde(skip)]
    pub tokens: Vec<u32>,
}

/// Cumulative sync bytes on one node pair when a turn's response arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSample {
    pub mode: ContextMode,
    pub repeat: u32,
    pub turn: u32,
    pub from: String,
    pub to: String,
    pub bytes: u64,
}

/// Sync bytes on one node pair after the run quiesced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncTotal {
    pub mode: ContextMode,
    pub repeat: u32,
    pub from: String,
    pub to: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: ContextMode,
    pub repeat: u32,
    pub ok_turns: u32,
    pub failed_turns: u32,
    pub sync_bytes: u64,
    /// Bytes the transport counted on client-to-node links (sim only).
    pub client_link_bytes: Option<u64>,
    /// Bytes the transport counted on node-to-node links (sim only).
    pub node_link_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub transport: TransportKind,
    pub modes: Vec<ContextMode>,
    pub turns: Vec<TurnRecord>,
    pub sync: Vec<SyncSample>,
    pub sync_totals: Vec<SyncTotal>,
    pub runs: Vec<RunRecord>,
}

#[derive(Serialize, Deserialize)]
struct MetricRow {
    mode: ContextMode,
    repeat: u32,
    turn: u32,
    node: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct TokenRow {
    mode: ContextMode,
    repeat: u32,
    turn: u32,
    fingerprint: String,
    ids: String,
}

pub fn fingerprint(tokens: &[u32]) -> String {
    format!("{:016x}", hash64(0, "tokens", tokens))
}

/// (min, median, max). `None` for no values.
pub fn min_median_max(values: &[f64]) -> Option<(f64, f64, f64)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return None;
    }
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    Some((v[0], median, v[n - 1]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    min_median_max(values).map(|m| m.1)
}

pub const METRICS: [&str; 3] = ["response_time_ms", "tps", "request_bytes"];

pub fn metric(t: &TurnRecord, name: &str) -> f64 {
    match name {
        "response_time_ms" => t.response_time_ms,
        "tps" => t.tps,
        "request_bytes" => t.request_bytes as f64,
        "sync_bytes" => t.sync_bytes as f64,
        other => panic!("unknown metric {other}"),
    }
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(|t| !t.ok)
    }

    /// Token ids per turn for one run, in turn order.
    pub fn tokens(&self, mode: ContextMode, repeat: u32) -> Vec<&[u32]> {
        self.turns
            .iter()
            .filter(|t| t.mode == mode && t.repeat == repeat)
            .map(|t| t.tokens.as_slice())
            .collect()
    }

    pub fn run_turns(&self, mode: ContextMode, repeat: u32) -> Vec<&TurnRecord> {
        self.turns.iter().filter(|t| t.mode == mode && t.repeat == repeat).collect()
    }

    /// Median over repeats of one metric, per turn, successful turns only.
    pub fn per_turn_median(&self, mode: ContextMode, name: &str) -> BTreeMap<u32, f64> {
        let mut by_turn: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for t in self.turns.iter().filter(|t| t.mode == mode && t.ok) {
            by_turn.entry(t.turn).or_default().push(metric(t, name));
        }
        by_turn.into_iter().filter_map(|(k, v)| median(&v).map(|m| (k, m))).collect()
    }

    /// Median over repeats of the quiesced sync total, all pairs.
    pub fn sync_total_median(&self, mode: ContextMode) -> Option<f64> {
        let v: Vec<f64> = self.runs.iter().filter(|r| r.mode == mode).map(|r| r.sync_bytes as f64).collect();
        median(&v)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_csv(dir, "turns.csv", &self.turns)?;
        for name in METRICS {
            write_csv(
                dir,
                &format!("{name}.csv"),
                self.turns.iter().map(|t| MetricRow {
                    mode: t.mode,
                    repeat: t.repeat,
                    turn: t.turn,
                    node: t.node.clone(),
                    value: metric(t, name),
                }),
            )?;
        }
        write_csv(dir, "sync_bytes.csv", &self.sync)?;
        write_csv(dir, "sync_totals.csv", &self.sync_totals)?;
        write_csv(dir, "runs.csv", &self.runs)?;
        write_csv(
            dir,
            "tokens.csv",
            self.turns.iter().map(|t| TokenRow {
                mode: t.mode,
                repeat: t.repeat,
                turn: t.turn,
                fingerprint: t.fingerprint.clone(),
                ids: t.tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            }),
        )?;
        fs::write(dir.join("summary.md"), self.summary())?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut turns: Vec<TurnRecord> = read_csv(dir, "turns.csv")?;
        let tokens: Vec<TokenRow> = read_csv(dir, "tokens.csv")?;
        let ids: BTreeMap<(ContextMode, u32, u32), Vec<u32>> = tokens
            .into_iter()
            .map(|r| {
                let ids = r.ids.split_whitespace().map(str::parse).collect::<Result<Vec<u32>, _>>()?;
                Ok(((r.mode, r.repeat, r.turn), ids))
            })
            .collect::<Result<_>>()?;
        for t in &mut turns {
            t.tokens = ids.get(&(t.mode, t.repeat, t.turn)).cloned().unwrap_or_default();
        }
        let mut modes: Vec<ContextMode> = Vec::new();
        for t in &turns {
            if !modes.contains(&t.mode) {
                modes.push(t.mode);
            }
        }
        let summary = fs::read_to_string(dir.join("summary.md")).unwrap_or_default();
        let scenario = summary
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .unwrap_or_default()
            .to_string();
        let transport = if summary.contains("transport: live") { TransportKind::Live } else { TransportKind::Sim };
        Ok(Self {
            scenario,
            transport,
            modes,
            turns,
            sync: read_csv(dir, "sync_bytes.csv")?,
            sync_totals: read_csv(dir, "sync_totals.csv")?,
            runs: read_csv(dir, "runs.csv")?,
        })
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let repeats = self.runs.iter().map(|r| r.repeat).max().map_or(0, |r| r + 1);
        let transport = match self.transport {
            TransportKind::Sim => "sim",
            TransportKind::Live => "live",
        };
        let _ = writeln!(out, "# {}\n", self.scenario);
        let _ = writeln!(out, "transport: {transport}, repeats: {repeats}\n");
        let _ = writeln!(
            out,
            "Per-turn values are min / median / max over repeats. Three repeats are too few for a\nconfidence interval, so none is given.\n"
        );
        for &mode in &self.modes {
            let _ = writeln!(out, "## {}\n", mode.as_str());
            let _ = writeln!(out, "| turn | node | response ms | TPS | request bytes | failed |");
            let _ = writeln!(out, "|---:|:---|---:|---:|---:|---:|");
            let mut turns: BTreeMap<u32, Vec<&TurnRecord>> = BTreeMap::new();
            for t in self.turns.iter().filter(|t| t.mode == mode) {
                turns.entry(t.turn).or_default().push(t);
            }
            for (turn, rows) in turns {
                let ok: Vec<&&TurnRecord> = rows.iter().filter(|t| t.ok).collect();
                let cell = |name: &str| {
                    let v: Vec<f64> = ok.iter().map(|t| metric(t, name)).collect();
                    min_median_max(&v).map_or("-".to_string(), |(a, m, b)| format!("{a:.2} / {m:.2} / {b:.2}"))
                };
                let _ = writeln!(
                    out,
                    "| {turn} | {} | {} | {} | {} | {} |",
                    rows[0].node,
                    cell("response_time_ms"),
                    cell("tps"),
                    cell("request_bytes"),
                    rows.len() - ok.len()
                );
            }
            let sync: Vec<f64> = self.runs.iter().filter(|r| r.mode == mode).map(|r| r.sync_bytes as f64).collect();
            if let Some((a, m, b)) = min_median_max(&sync) {
                let _ = writeln!(out, "\nsync bytes per run: {a:.0} / {m:.0} / {b:.0}\n");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(min_median_max(&[3.0, 1.0, 2.0]), Some((1.0, 2.0, 3.0)));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn fingerprints_differ() {
        assert_ne!(fingerprint(&[1, 2]), fingerprint(&[2, 1]));
        assert_eq!(fingerprint(&[]).len(), 16);
    }
}
