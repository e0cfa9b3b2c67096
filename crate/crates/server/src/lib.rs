//! Live edge node: the context manager on tokio, reachable over
//!
//! - the TCP node API (length-prefixed UTF-8 JSON frames),
//! - TCP replica sync (length-prefixed replica update frames),
//! - HTTP/JSON.
//!
//! Any listener left out of the config is not started.

pub mod http;
pub mod runtime;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use bytes::Bytes;
use discedge_core::manager::{ContextManager, ManagerError, NodeConfig};
use discedge_core::store::ReplicaUpdate;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::{JoinHandle, JoinSet};
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tracing::{debug, info, warn};

pub use runtime::{PeerTable, SocketTransport, TokioRuntime};

pub type LiveNode = ContextManager<TokioRuntime>;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ConfigParse { path: String, source: serde_yaml::Error },
    #[error(transparent)]
    Manager(#[from] ManagerError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

/// Reads a YAML (or JSON) node config.
pub fn load_config(path: impl AsRef<Path>) -> Result<NodeConfig, ServerError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ServerError::ConfigRead { path: display.clone(), source })?;
    let config: NodeConfig =
        serde_yaml::from_str(&text).map_err(|source| ServerError::ConfigParse { path: display, source })?;
    config.validate()?;
    Ok(config)
}

async fn bind(addr: &Option<String>) -> Result<Option<TcpListener>, ServerError> {
    match addr {
        None => Ok(None),
        Some(a) => TcpListener::bind(a)
            .await
            .map(Some)
            .map_err(|source| ServerError::Bind { addr: a.clone(), source }),
    }
}

fn local_addr(l: &Option<TcpListener>) -> Option<SocketAddr> {
    l.as_ref().and_then(|l| l.local_addr().ok())
}

/// A running node. Dropping it (or calling [`RunningNode::shutdown`]) stops
/// every listener, open connection and replica writer.
pub struct RunningNode {
    pub node: Arc<LiveNode>,
    pub api_addr: Option<SocketAddr>,
    pub sync_addr: Option<SocketAddr>,
    pub http_addr: Option<SocketAddr>,
    peers: PeerTable,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningNode {
    /// Binds the configured listeners and starts serving. Port 0 picks a
    /// free port; the bound addresses are reported on the handle.
    pub async fn start(config: NodeConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let api = bind(&config.listen).await?;
        let sync = bind(&config.sync_listen).await?;
        let web = bind(&config.http_listen).await?;
        let peers: PeerTable = Arc::new(RwLock::new(config.peers.clone()));
        let delay = Duration::from_secs_f64(config.sync_delay_ms / 1000.0);
        let runtime = Arc::new(TokioRuntime::new(config.time_scale, Arc::clone(&peers), delay));
        let node = Arc::new(ContextManager::new(config, runtime)?);

        let mut running = Self {
            api_addr: local_addr(&api),
            sync_addr: local_addr(&sync),
            http_addr: local_addr(&web),
            node: Arc::clone(&node),
            peers,
            tasks: Vec::new(),
        };
        if let Some(l) = api {
            running.tasks.push(tokio::spawn(accept_loop(l, Arc::clone(&node), serve_api)));
        }
        if let Some(l) = sync {
            running.tasks.push(tokio::spawn(accept_loop(l, Arc::clone(&node), serve_sync)));
        }
        if let Some(l) = web {
            let app = http::router(Arc::clone(&node));
            running.tasks.push(tokio::spawn(async move {
                if let Err(e) = axum::serve(l, app).await {
                    warn!(error = %e, "http server stopped");
                }
            }));
        }
        info!(
            node = %node.node_id(),
            api = ?running.api_addr,
            sync = ?running.sync_addr,
            http = ?running.http_addr,
            "node started"
        );
        Ok(running)
    }

    pub fn node_id(&self) -> &str {
        self.node.node_id()
    }

    /// Replaces the sync addresses of the other nodes. New connections use
    /// the new table.
    pub fn set_peers(&self, peers: BTreeMap<String, String>) {
        *self.peers.write().expect("peer table") = peers;
    }

    pub fn shutdown(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
        self.node.runtime().transport().shutdown();
    }

    /// Serves until the process receives ctrl-c.
    pub async fn run_until_ctrl_c(mut self) {
        if let Err(e) = tokio::signal::ctrl_c().await {
            warn!(error = %e, "cannot listen for ctrl-c");
            futures::future::pending::<()>().await;
        }
        self.shutdown();
    }
}

impl Drop for RunningNode {
    fn drop(&mut self) {
        self.shutdown();
    }
}

async fn accept_loop<F, Fut>(listener: TcpListener, node: Arc<LiveNode>, serve: F)
where
    F: Fn(Framed<TcpStream, LengthDelimitedCodec>, Arc<LiveNode>) -> Fut,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    // connections live in the set, so aborting this task closes them too
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!(%peer, "connection accepted");
                    let _ = stream.set_nodelay(true);
                    conns.spawn(serve(Framed::new(stream, LengthDelimitedCodec::new()), Arc::clone(&node)));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
}

/// One request at a time per connection, replies in order.
async fn serve_api(mut conn: Framed<TcpStream, LengthDelimitedCodec>, node: Arc<LiveNode>) {
    while let Some(frame) = conn.next().await {
        let body = match frame {
            Ok(b) => b,
            Err(e) => {
                debug!(error = %e, "api read failed");
                return;
            }
        };
        let reply = node.handle_frame(&body).await;
        if let Err(e) = conn.send(Bytes::from(reply)).await {
            debug!(error = %e, "api write failed");
            return;
        }
    }
}

/// Replica frames carry their origin node, which is also the sender since
/// updates are only fanned out by the node that made them.
async fn serve_sync(mut conn: Framed<TcpStream, LengthDelimitedCodec>, node: Arc<LiveNode>) {
    while let Some(frame) = conn.next().await {
        let Ok(body) = frame else { return };
        let from = match ReplicaUpdate::decode(&body) {
            Ok(u) => u.value.origin_node,
            Err(e) => {
                warn!(error = %e, "undecodable replica frame");
                continue;
            }
        };
        let wire_len = body.len() + discedge_core::codec::LENGTH_PREFIX;
        if let Err(e) = node.apply_sync_frame(&from, &body, wire_len) {
            warn!(%from, error = %e, "rejected replica frame");
        }
    }
}
