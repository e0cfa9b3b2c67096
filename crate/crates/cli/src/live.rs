//! Live clusters for `run --live`: nodes on localhost sockets, either in
//! this process or as child processes started from node config files.

use std::collections::BTreeMap;
use std::net::TcpListener as StdListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use discedge_client::TcpNodeLink;
use discedge_core::manager::NodeConfig;
use discedge_server::RunningNode;

use crate::scenario::ScenarioConfig;

const HEALTH_TIMEOUT: Duration = Duration::from_secs(15);

/// Node config for live use. Replication frames are held back by the
/// scenario's node latency, scaled like all other modelled time.
pub fn live_node_config(config: &ScenarioConfig, id: &str) -> NodeConfig {
    let mut c = config.node_config(id);
    c.sync_delay_ms = config.harness.node_latency_ms * config.harness.time_scale;
    c
}

fn free_port() -> Result<u16> {
    Ok(StdListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

pub async fn wait_healthy(endpoints: &BTreeMap<String, String>, timeout: Duration) -> Result<()> {
    let link = TcpNodeLink::new(endpoints.clone());
    let deadline = Instant::now() + timeout;
    for node in endpoints.keys() {
        loop {
            match link.health(node).await {
                Ok(_) => break,
                Err(e) if Instant::now() >= deadline => bail!("node {node} not healthy: {e}"),
                Err(_) => tokio::time::sleep(Duration::from_millis(50)).await,
            }
        }
    }
    Ok(())
}

pub struct InProcessCluster {
    nodes: BTreeMap<String, RunningNode>,
    pub endpoints: BTreeMap<String, String>,
}

impl InProcessCluster {
    pub async fn start(config: &ScenarioConfig) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for id in config.node_ids() {
            let mut c = live_node_config(config, &id);
            c.listen = Some("127.0.0.1:0".into());
            c.sync_listen = Some("127.0.0.1:0".into());
            let node = RunningNode::start(c).await.with_context(|| format!("starting node {id}"))?;
            nodes.insert(id, node);
        }
        let sync: BTreeMap<String, String> = nodes
            .iter()
            .map(|(id, n)| (id.clone(), n.sync_addr.expect("sync listener").to_string()))
            .collect();
        for n in nodes.values() {
            n.set_peers(sync.iter().filter(|(id, _)| id.as_str() != n.node_id()).map(|(a, b)| (a.clone(), b.clone())).collect());
        }
        let endpoints = nodes
            .iter()
            .map(|(id, n)| (id.clone(), n.api_addr.expect("api listener").to_string()))
            .collect();
        wait_healthy(&endpoints, HEALTH_TIMEOUT).await?;
        Ok(Self { nodes, endpoints })
    }

    /// Stops one node, as if it crashed.
    pub fn stop(&mut self, id: &str) {
        if let Some(mut n) = self.nodes.remove(id) {
            n.shutdown();
        }
    }
}

/// Child node processes. Killed on drop.
pub struct ProcessCluster {
    children: Vec<Child>,
    pub endpoints: BTreeMap<String, String>,
}

impl Drop for ProcessCluster {
    fn drop(&mut self) {
        for c in &mut self.children {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// Writes one node config per node into `dir` and starts `exe node --config
/// <file>` for each, then waits until all answer health checks.
pub async fn spawn_live_cluster(config: &ScenarioConfig, exe: &Path, dir: &Path) -> Result<ProcessCluster> {
    std::fs::create_dir_all(dir)?;
    let mut api = BTreeMap::new();
    let mut sync = BTreeMap::new();
    for id in config.node_ids() {
        api.insert(id.clone(), format!("127.0.0.1:{}", free_port()?));
        sync.insert(id.clone(), format!("127.0.0.1:{}", free_port()?));
    }
    let mut cluster = ProcessCluster { children: Vec::new(), endpoints: api.clone() };
    for id in config.node_ids() {
        let mut c = live_node_config(config, &id);
        c.listen = Some(api[&id].clone());
        c.sync_listen = Some(sync[&id].clone());
        c.peers = sync.iter().filter(|(p, _)| **p != id).map(|(a, b)| (a.clone(), b.clone())).collect();
        let path = dir.join(format!("node-{id}.yaml"));
        std::fs::write(&path, serde_yaml::to_string(&c)?)?;
        let child = Command::new(exe)
            .arg("node")
            .arg("--config")
            .arg(&path)
            .stdin(Stdio::null())
            .spawn()
            .with_context(|| format!("starting {} for node {id}", exe.display()))?;
        cluster.children.push(child);
    }
    wait_healthy(&cluster.endpoints, HEALTH_TIMEOUT).await?;
    Ok(cluster)
}
