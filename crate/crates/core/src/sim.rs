//! In-process cluster on a virtual clock.
//!
//! All nodes, clients and links share one [`SimNetwork`] plus a timer queue
//! for deferred work. Time only moves when someone sleeps or waits for a
//! delivery, so a run is a pure function of its configuration and seed.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use futures::future::{self, BoxFuture};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use tracing::warn;

use crate::client::{ClientError, Exchange, NodeLink};
use crate::manager::{ContextManager, ManagerError, NodeConfig, Runtime};
use crate::store::{Outbound, ReplicatedStore, SyncCounters};
use crate::transport::{Delivery, FrameTransport, LinkSpec, Nanos, SimNetwork, TransportError, NANOS_PER_MS};

/// Wall-clock origin of virtual time (2023-11-14T22:13:20Z), so stored
/// expiry timestamps have realistic sizes.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

type Job = Box<dyn FnOnce() + Send>;

enum Event {
    Frame(Delivery),
    Timer(Job),
}

struct SimCore {
    net: SimNetwork,
    timers: BTreeMap<(Nanos, u64), Job>,
    timer_seq: u64,
    stores: BTreeMap<String, Arc<Mutex<ReplicatedStore>>>,
    inboxes: BTreeMap<String, VecDeque<Delivery>>,
    rng: StdRng,
}

impl SimCore {
    fn next_event(&mut self, limit: Nanos) -> Option<Event> {
        let frame_at = self.net.next_due().filter(|&t| t <= limit);
        let timer_at = self.timers.keys().next().map(|k| k.0).filter(|&t| t <= limit);
        match (frame_at, timer_at) {
            (Some(f), Some(t)) if t < f => self.pop_timer(),
            (Some(_), _) => self.net.pop_due(limit).map(Event::Frame),
            (None, Some(_)) => self.pop_timer(),
            (None, None) => None,
        }
    }

    fn pop_timer(&mut self) -> Option<Event> {
        let (&(at, seq), _) = self.timers.iter().next()?;
        let job = self.timers.remove(&(at, seq))?;
        self.net.set_now(at);
        Some(Event::Timer(job))
    }
}

/// Runs every event due up to `target`, then parks the clock at `target`.
fn run_until(core: &Arc<Mutex<SimCore>>, target: Nanos) {
    loop {
        let event = core.lock().expect("sim lock").next_event(target);
        match event {
            None => break,
            Some(Event::Timer(job)) => job(),
            Some(Event::Frame(d)) => {
                let store = {
                    let mut c = core.lock().expect("sim lock");
                    match c.stores.get(&d.from).and(c.stores.get(&d.to)) {
                        Some(store) => Some(Arc::clone(store)),
                        None => {
                            c.inboxes.entry(d.to.clone()).or_default().push_back(d.clone());
                            None
                        }
                    }
                };
                if let Some(store) = store {
                    let now_ms = SIM_EPOCH_MS + d.at / NANOS_PER_MS;
                    if let Err(e) = store.lock().expect("store lock").apply_remote(&d.from, &d.payload, d.wire_len(), now_ms) {
                        warn!(from = %d.from, to = %d.to, error = %e, "rejected replica frame");
                    }
                }
            }
        }
    }
    core.lock().expect("sim lock").net.set_now(target);
}

/// [`Runtime`] backed by the shared virtual clock.
pub struct SimRuntime {
    core: Arc<Mutex<SimCore>>,
}

impl Runtime for SimRuntime {
    fn now(&self) -> Nanos {
        SIM_EPOCH_MS * NANOS_PER_MS + self.core.lock().expect("sim lock").net.now()
    }

    fn sleep(&self, duration: Nanos) -> BoxFuture<'static, ()> {
        let target = self.core.lock().expect("sim lock").net.now() + duration;
        run_until(&self.core, target);
        Box::pin(future::ready(()))
    }

    fn defer(&self, delay: Nanos, job: Box<dyn FnOnce() + Send>) {
        let mut core = self.core.lock().expect("sim lock");
        let at = core.net.now() + delay;
        core.timer_seq += 1;
        let seq = core.timer_seq;
        core.timers.insert((at, seq), job);
    }

    fn replicate(&self, from: &str, outbound: Vec<Outbound>) {
        let mut core = self.core.lock().expect("sim lock");
        for o in outbound {
            if let Err(e) = core.net.send(from, &o.peer, o.body) {
                warn!(%from, peer = %o.peer, error = %e, "replica frame not sent");
            }
        }
    }

    fn fresh_id(&self) -> String {
        let mut core = self.core.lock().expect("sim lock");
        format!("{:016x}{:016x}", core.rng.next_u64(), core.rng.next_u64())
    }
}

pub type SimNode = ContextManager<SimRuntime>;

#[derive(Clone)]
pub struct SimCluster {
    core: Arc<Mutex<SimCore>>,
    nodes: BTreeMap<String, Arc<SimNode>>,
}

impl SimCluster {
    pub fn new(seed: u64) -> Self {
        Self {
            core: Arc::new(Mutex::new(SimCore {
                net: SimNetwork::new(seed),
                timers: BTreeMap::new(),
                timer_seq: 0,
                stores: BTreeMap::new(),
                inboxes: BTreeMap::new(),
                rng: StdRng::seed_from_u64(seed ^ 0x5eed),
            })),
            nodes: BTreeMap::new(),
        }
    }

    pub fn add_node(&mut self, config: NodeConfig) -> Result<Arc<SimNode>, ManagerError> {
        let runtime = Arc::new(SimRuntime { core: Arc::clone(&self.core) });
        let node = Arc::new(ContextManager::new(config, runtime)?);
        self.core
            .lock()
            .expect("sim lock")
            .stores
            .insert(node.node_id().to_string(), Arc::clone(node.store()));
        self.nodes.insert(node.node_id().to_string(), Arc::clone(&node));
        Ok(node)
    }

    pub fn node(&self, id: &str) -> Option<&Arc<SimNode>> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn add_link(&self, spec: LinkSpec) -> Result<(), TransportError> {
        self.core.lock().expect("sim lock").net.add_link(spec)
    }

    pub fn add_duplex(&self, a: &str, b: &str, latency_ms: f64, jitter_ms: f64) -> Result<(), TransportError> {
        self.core.lock().expect("sim lock").net.add_duplex(a, b, latency_ms, jitter_ms)
    }

    pub fn set_partitioned(&self, from: &str, to: &str, partitioned: bool) -> Result<(), TransportError> {
        self.core.lock().expect("sim lock").net.set_partitioned(from, to, partitioned)
    }

    /// Gives direct access to the network, e.g. for counters.
    pub fn with_network<T>(&self, f: impl FnOnce(&mut SimNetwork) -> T) -> T {
        f(&mut self.core.lock().expect("sim lock").net)
    }

    /// Virtual time since the start of the run.
    pub fn elapsed(&self) -> Nanos {
        self.core.lock().expect("sim lock").net.now()
    }

    pub fn now_ms(&self) -> u64 {
        SIM_EPOCH_MS + self.elapsed() / NANOS_PER_MS
    }

    pub fn advance(&self, duration: Nanos) {
        let target = self.elapsed() + duration;
        run_until(&self.core, target);
    }

    /// Runs until no frames or timers remain.
    pub fn quiesce(&self) {
        loop {
            let next = {
                let c = self.core.lock().expect("sim lock");
                let t = c.timers.keys().next().map(|k| k.0);
                match (c.net.next_due(), t) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            };
            match next {
                Some(t) => run_until(&self.core, t),
                None => break,
            }
        }
    }

    pub fn sync_counters(&self, node: &str) -> Option<SyncCounters> {
        self.nodes.get(node).map(|n| n.store().lock().expect("store lock").sync_bytes().clone())
    }

    /// Clears stores, inboxes, pending work and all byte counters. The clock
    /// keeps running.
    pub fn reset(&self) {
        self.quiesce();
        let mut c = self.core.lock().expect("sim lock");
        for store in c.stores.values() {
            store.lock().expect("store lock").clear();
        }
        c.inboxes.clear();
        c.net.reset_counters();
    }

    pub fn client(&self, id: impl Into<String>) -> SimClient<'_> {
        SimClient { cluster: self, id: id.into() }
    }

    fn take_from(&self, to: &str, from: &str) -> Option<Delivery> {
        let mut c = self.core.lock().expect("sim lock");
        let q = c.inboxes.get_mut(to)?;
        let idx = q.iter().position(|d| d.from == from)?;
        q.remove(idx)
    }
}

/// A client attached to the simulated network under its own id. Requests
/// and responses travel over the client's links and are counted there.
pub struct SimClient<'a> {
    cluster: &'a SimCluster,
    id: String,
}

impl SimClient<'_> {
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl NodeLink for SimClient<'_> {
    async fn call(&self, node: &str, body: Vec<u8>) -> Result<Exchange, ClientError> {
        let cluster = self.cluster;
        let target = cluster
            .nodes
            .get(node)
            .ok_or_else(|| ClientError::Transport(format!("unknown node {node}")))?;
        let started = cluster.elapsed();
        let send = |from: &str, to: &str, body: Vec<u8>| {
            let handle = cluster
                .core
                .lock()
                .expect("sim lock")
                .net
                .send(from, to, body)
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            handle
                .deliver_at
                .ok_or_else(|| ClientError::Transport(format!("{from}->{to} is partitioned")))
        };

        let at = send(&self.id, node, body)?;
        run_until(&cluster.core, at);
        let request = cluster
            .take_from(node, &self.id)
            .ok_or_else(|| ClientError::Transport("request not delivered".into()))?;
        let reply = target.handle_frame(&request.payload).await;
        let at = send(node, &self.id, reply)?;
        run_until(&cluster.core, at);
        let response = cluster
            .take_from(&self.id, node)
            .ok_or_else(|| ClientError::Transport("response not delivered".into()))?;
        Ok(Exchange { response: response.payload, elapsed: cluster.elapsed() - started })
    }
}
