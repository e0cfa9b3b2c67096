//! Replays a scenario for every mode and repeat and collects metrics.
//!
//! Each (mode, repeat) run starts from empty stores and zeroed counters. In
//! simulation every run gets a fresh cluster seeded with `seed + repeat`,
//! so all modes of one repeat see the same network.

use std::collections::BTreeMap;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use discedge_client::TcpNodeLink;
use discedge_core::client::{ask, ClientSession, NodeLink};
use discedge_core::engine::hash64;
use discedge_core::manager::nanos_to_ms;
use discedge_core::protocol::{ContextMode, Response};
use discedge_core::SimCluster;
use futures::executor::block_on;
use tracing::{info, warn};

use crate::report::{fingerprint, Report, RunRecord, SyncSample, SyncTotal, TransportKind, TurnRecord};
use crate::scenario::{ScenarioConfig, CLIENT_ID};

type PairBytes = BTreeMap<(String, String), u64>;

/// Transport-level bytes sent on client links and on node-to-node links.
fn sim_link_bytes(cluster: &SimCluster) -> (u64, u64) {
    cluster.with_network(|n| {
        let all = n.all_counters();
        let client = all.iter().filter(|((from, _), _)| from == CLIENT_ID).map(|(_, c)| c.bytes_sent).sum();
        let nodes = all
            .iter()
            .filter(|((from, to), _)| from != CLIENT_ID && to != CLIENT_ID)
            .map(|(_, c)| c.bytes_sent)
            .sum();
        (client, nodes)
    })
}

fn sim_sync_bytes(cluster: &SimCluster) -> PairBytes {
    let mut out = PairBytes::new();
    for id in cluster.node_ids() {
        if let Some(c) = cluster.sync_counters(id) {
            for (peer, bytes) in c.sent {
                out.insert((id.to_string(), peer), bytes);
            }
        }
    }
    out
}

/// Session ids are fixed per (seed, mode, repeat) so turn 1 carries one
/// like every later turn and reports stay reproducible.
fn session_id(config: &ScenarioConfig, mode: ContextMode, repeat: u32) -> String {
    let seed = config.harness.seed as i64;
    format!("{:016x}{:016x}", hash64(seed, mode.as_str(), &[repeat]), hash64(seed, &config.name, &[repeat]))
}

fn new_session(config: &ScenarioConfig, mode: ContextMode, repeat: u32) -> ClientSession {
    let mut s = ClientSession::new(config.model_id(), mode);
    s.user_id = Some(config.user_id.clone());
    s.session_id = Some(session_id(config, mode, repeat));
    s.system = config.harness.system_prompt.clone();
    s.params = config.harness.params.clone();
    s
}

struct RunOutput {
    turns: Vec<TurnRecord>,
    sync: Vec<SyncSample>,
}

async fn replay<L: NodeLink, S>(
    config: &ScenarioConfig,
    mode: ContextMode,
    repeat: u32,
    link: &L,
    sync_bytes: impl Fn() -> S,
) -> Result<RunOutput>
where
    S: std::future::Future<Output = Result<PairBytes>>,
{
    let mut session = new_session(config, mode, repeat);
    let mut out = RunOutput { turns: Vec::new(), sync: Vec::new() };
    for (i, message) in config.messages.iter().enumerate() {
        let turn = i as u32 + 1;
        let node = config.node_for(i).to_string();
        let request_turn = session.turn;
        let (result, metrics) = ask(&mut session, link, &node, message).await;
        let pairs = sync_bytes().await?;
        let mut row = TurnRecord {
            mode,
            repeat,
            turn,
            request_turn,
            node: node.clone(),
            ok: false,
            error: String::new(),
            consistency: String::new(),
            retries: 0,
            response_time_ms: nanos_to_ms(metrics.elapsed),
            tokenize_ms: 0.0,
            inference_ms: 0.0,
            tps: 0.0,
            request_bytes: metrics.request_bytes,
            response_bytes: metrics.response_bytes,
            tokens_generated: 0,
            sync_bytes: pairs.values().sum(),
            fingerprint: String::new(),
            tokens: Vec::new(),
        };
        match result {
            Ok(resp) => {
                row.ok = true;
                row.consistency = resp.consistency.as_str().to_string();
                row.retries = resp.retries;
                row.tokenize_ms = resp.timings.tokenize_ms;
                row.inference_ms = resp.timings.inference_ms;
                row.tps = if resp.timings.inference_ms > 0.0 {
                    resp.tokens_generated as f64 / (resp.timings.inference_ms / 1000.0)
                } else {
                    0.0
                };
                row.tokens_generated = resp.tokens_generated;
                row.fingerprint = fingerprint(&resp.tokens);
                row.tokens = resp.tokens;
            }
            Err(e) => {
                warn!(mode = mode.as_str(), repeat, turn, %node, error = %e, "turn failed");
                row.error = e.code().as_str().to_string();
            }
        }
        out.sync.extend(pairs.into_iter().map(|((from, to), bytes)| SyncSample { mode, repeat, turn, from, to, bytes }));
        out.turns.push(row);
    }
    Ok(out)
}

fn collect(
    report: &mut Report,
    mode: ContextMode,
    repeat: u32,
    run: RunOutput,
    totals: PairBytes,
    link_bytes: Option<(u64, u64)>,
) {
    let failed = run.turns.iter().filter(|t| !t.ok).count() as u32;
    report.runs.push(RunRecord {
        mode,
        repeat,
        ok_turns: run.turns.len() as u32 - failed,
        failed_turns: failed,
        sync_bytes: totals.values().sum(),
        client_link_bytes: link_bytes.map(|b| b.0),
        node_link_bytes: link_bytes.map(|b| b.1),
    });
    report
        .sync_totals
        .extend(totals.into_iter().map(|((from, to), bytes)| SyncTotal { mode, repeat, from, to, bytes }));
    report.turns.extend(run.turns);
    report.sync.extend(run.sync);
}

fn empty_report(config: &ScenarioConfig, transport: TransportKind) -> Report {
    Report {
        scenario: config.name.clone(),
        transport,
        modes: config.harness.modes.clone(),
        turns: Vec::new(),
        sync: Vec::new(),
        sync_totals: Vec::new(),
        runs: Vec::new(),
    }
}

pub fn build_sim_cluster(config: &ScenarioConfig, seed: u64) -> Result<SimCluster> {
    let mut cluster = SimCluster::new(seed);
    for id in config.node_ids() {
        cluster.add_node(config.node_config(&id)).with_context(|| format!("node {id}"))?;
    }
    for link in config.link_specs() {
        cluster.add_link(link)?;
    }
    Ok(cluster)
}

/// Runs the scenario on the virtual clock. Deterministic in the config.
pub fn run_sim(config: &ScenarioConfig) -> Result<Report> {
    let mut report = empty_report(config, TransportKind::Sim);
    for &mode in &config.harness.modes {
        for repeat in 0..config.harness.repeats {
            let cluster = build_sim_cluster(config, config.harness.seed.wrapping_add(repeat as u64))?;
            let client = cluster.client(CLIENT_ID);
            let run = block_on(replay(config, mode, repeat, &client, || async { Ok(sim_sync_bytes(&cluster)) }))?;
            cluster.quiesce();
            let totals = sim_sync_bytes(&cluster);
            collect(&mut report, mode, repeat, run, totals, Some(sim_link_bytes(&cluster)));
            info!(mode = mode.as_str(), repeat, "sim run done");
        }
    }
    Ok(report)
}

struct LiveBackend {
    link: TcpNodeLink,
    nodes: Vec<String>,
}

impl LiveBackend {
    async fn sync_bytes(&self) -> Result<PairBytes> {
        let mut out = PairBytes::new();
        for node in &self.nodes {
            match self.link.stats(node).await {
                Ok(Response::StatsOk { sync_sent, .. }) => {
                    for (peer, bytes) in sync_sent {
                        out.insert((node.clone(), peer), bytes);
                    }
                }
                Ok(_) => unreachable!("stats() only returns StatsOk"),
                // an unreachable node reports nothing
                Err(e) => warn!(%node, error = %e, "stats unavailable"),
            }
        }
        Ok(out)
    }

    /// Waits until the sync counters stop moving, i.e. deferred write-backs
    /// and their replication are done.
    async fn settle(&self) {
        let mut last = None;
        for _ in 0..100 {
            tokio::time::sleep(Duration::from_millis(50)).await;
            let now = self.sync_bytes().await.ok();
            if now.is_some() && now == last {
                return;
            }
            last = now;
        }
    }
}

/// Runs the scenario against running nodes. `endpoints` maps node ids to
/// node API addresses.
pub async fn run_live(config: &ScenarioConfig, endpoints: BTreeMap<String, String>) -> Result<Report> {
    let nodes = config.node_ids();
    if let Some(n) = nodes.iter().find(|n| !endpoints.contains_key(*n)) {
        return Err(anyhow!("no endpoint for node {n}"));
    }
    let backend = LiveBackend { link: TcpNodeLink::new(endpoints), nodes };
    let mut report = empty_report(config, TransportKind::Live);
    for &mode in &config.harness.modes {
        for repeat in 0..config.harness.repeats {
            for n in &backend.nodes {
                if let Err(e) = backend.link.reset(n).await {
                    warn!(node = %n, error = %e, "reset failed");
                }
            }
            let run = replay(config, mode, repeat, &backend.link, || backend.sync_bytes()).await?;
            backend.settle().await;
            let totals = backend.sync_bytes().await?;
            collect(&mut report, mode, repeat, run, totals, None);
            info!(mode = mode.as_str(), repeat, "live run done");
        }
    }
    Ok(report)
}
