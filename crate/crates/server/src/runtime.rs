//! Wall-clock runtime and the socket replica transport.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use discedge_core::codec::LENGTH_PREFIX;
use discedge_core::manager::Runtime;
use discedge_core::store::Outbound;
use discedge_core::transport::{DeliveryHandle, FrameTransport, LinkCounters, Nanos, TransportError};
use futures::future::BoxFuture;
use futures::SinkExt;
use rand::RngCore;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tracing::{debug, warn};

const CONNECT_ATTEMPTS: u32 = 20;
const CONNECT_BACKOFF: Duration = Duration::from_millis(50);

pub type PeerTable = Arc<RwLock<BTreeMap<String, String>>>;

struct Peer {
    tx: mpsc::UnboundedSender<(Instant, Vec<u8>)>,
    task: JoinHandle<()>,
}

/// Replica frames over TCP, one ordered connection per peer. Frames to a
/// peer are written in send order; a peer that cannot be reached after a
/// few attempts loses the frame, which the reader then sees as staleness.
pub struct SocketTransport {
    handle: tokio::runtime::Handle,
    peers: PeerTable,
    delay: Duration,
    links: BTreeMap<String, Peer>,
    counters: BTreeMap<(String, String), LinkCounters>,
}

impl SocketTransport {
    pub fn new(handle: tokio::runtime::Handle, peers: PeerTable, delay: Duration) -> Self {
        Self { handle, peers, delay, links: BTreeMap::new(), counters: BTreeMap::new() }
    }

    fn link(&mut self, to: &str) -> &Peer {
        let (handle, peers, delay) = (&self.handle, &self.peers, self.delay);
        self.links.entry(to.to_string()).or_insert_with(|| {
            let (tx, rx) = mpsc::unbounded_channel();
            let task = handle.spawn(peer_writer(to.to_string(), Arc::clone(peers), delay, rx));
            Peer { tx, task }
        })
    }

    pub fn shutdown(&mut self) {
        for (_, peer) in std::mem::take(&mut self.links) {
            peer.task.abort();
        }
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl FrameTransport for SocketTransport {
    fn send(&mut self, from: &str, to: &str, payload: Vec<u8>) -> Result<DeliveryHandle, TransportError> {
        if !self.peers.read().expect("peer table").contains_key(to) {
            return Err(TransportError::Routing { from: from.into(), to: to.into() });
        }
        let wire = (payload.len() + LENGTH_PREFIX) as u64;
        self.link(to)
            .tx
            .send((Instant::now(), payload))
            .map_err(|_| TransportError::Connection { peer: to.into(), message: "writer stopped".into() })?;
        let c = self.counters.entry((from.to_string(), to.to_string())).or_default();
        c.frames_sent += 1;
        c.bytes_sent += wire;
        Ok(DeliveryHandle { from: from.into(), to: to.into(), deliver_at: None })
    }

    fn counters(&self, from: &str, to: &str) -> Option<LinkCounters> {
        self.counters.get(&(from.to_string(), to.to_string())).copied()
    }
}

async fn connect(peer: &str, peers: &PeerTable) -> Option<Framed<TcpStream, LengthDelimitedCodec>> {
    for attempt in 0..CONNECT_ATTEMPTS {
        let addr = peers.read().expect("peer table").get(peer).cloned();
        if let Some(addr) = addr {
            match TcpStream::connect(&addr).await {
                Ok(stream) => {
                    let _ = stream.set_nodelay(true);
                    return Some(Framed::new(stream, LengthDelimitedCodec::new()));
                }
                Err(e) => debug!(%peer, %addr, attempt, error = %e, "sync connect failed"),
            }
        }
        tokio::time::sleep(CONNECT_BACKOFF).await;
    }
    None
}

async fn peer_writer(
    peer: String,
    peers: PeerTable,
    delay: Duration,
    mut rx: mpsc::UnboundedReceiver<(Instant, Vec<u8>)>,
) {
    let mut conn = None;
    while let Some((queued, frame)) = rx.recv().await {
        tokio::time::sleep_until(queued + delay).await;
        let frame = Bytes::from(frame);
        // one reconnect per frame, then give up on it
        for _ in 0..2 {
            if conn.is_none() {
                conn = connect(&peer, &peers).await;
            }
            let Some(c) = conn.as_mut() else { break };
            match c.send(frame.clone()).await {
                Ok(()) => break,
                Err(e) => {
                    debug!(%peer, error = %e, "sync write failed");
                    conn = None;
                }
            }
        }
        if conn.is_none() {
            warn!(%peer, "replica frame dropped, peer unreachable");
        }
    }
}

/// [`Runtime`] on tokio. Simulated engine time is slept for real, scaled by
/// `time_scale`.
pub struct TokioRuntime {
    handle: tokio::runtime::Handle,
    time_scale: f64,
    transport: Mutex<SocketTransport>,
}

impl TokioRuntime {
    /// Must be called from inside a tokio runtime.
    pub fn new(time_scale: f64, peers: PeerTable, sync_delay: Duration) -> Self {
        let handle = tokio::runtime::Handle::current();
        let transport = SocketTransport::new(handle.clone(), peers, sync_delay);
        Self { handle, time_scale, transport: Mutex::new(transport) }
    }

    fn scaled(&self, d: Nanos) -> Duration {
        Duration::from_nanos((d as f64 * self.time_scale).round() as u64)
    }

    pub fn transport(&self) -> std::sync::MutexGuard<'_, SocketTransport> {
        self.transport.lock().expect("transport lock")
    }
}

impl Runtime for TokioRuntime {
    fn now(&self) -> Nanos {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as Nanos)
    }

    fn sleep(&self, duration: Nanos) -> BoxFuture<'static, ()> {
        Box::pin(tokio::time::sleep(self.scaled(duration)))
    }

    fn defer(&self, delay: Nanos, job: Box<dyn FnOnce() + Send>) {
        let delay = self.scaled(delay);
        self.handle.spawn(async move {
            tokio::time::sleep(delay).await;
            job();
        });
    }

    fn replicate(&self, from: &str, outbound: Vec<Outbound>) {
        let mut transport = self.transport();
        for o in outbound {
            if let Err(e) = transport.send(from, &o.peer, o.body) {
                warn!(%from, peer = %o.peer, error = %e, "replica frame not sent");
            }
        }
    }

    fn fresh_id(&self) -> String {
        let mut rng = rand::thread_rng();
        format!("{:016x}{:016x}", rng.next_u64(), rng.next_u64())
    }
}
