//! Thin TCP client for the node API. Keeps one connection per node and
//! reconnects once if a cached connection turns out to be dead.

use std::collections::BTreeMap;
use std::time::Instant;

use bytes::Bytes;
use discedge_core::client::{ClientError, Exchange, NodeLink};
use discedge_core::protocol::{Request, Response, SessionRef};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::sync::Mutex;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

type Conn = Framed<TcpStream, LengthDelimitedCodec>;

pub struct TcpNodeLink {
    addrs: BTreeMap<String, String>,
    conns: Mutex<BTreeMap<String, Conn>>,
}

impl TcpNodeLink {
    /// `addrs` maps node ids to node API addresses.
    pub fn new(addrs: BTreeMap<String, String>) -> Self {
        Self { addrs, conns: Mutex::new(BTreeMap::new()) }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.addrs.keys().map(String::as_str)
    }

    async fn connect(&self, node: &str) -> Result<Conn, ClientError> {
        let addr = self
            .addrs
            .get(node)
            .ok_or_else(|| ClientError::Transport(format!("unknown node {node}")))?;
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|e| ClientError::Transport(format!("{node} at {addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        Ok(Framed::new(stream, LengthDelimitedCodec::new()))
    }

    async fn exchange(conn: &mut Conn, body: Bytes) -> Result<Vec<u8>, String> {
        conn.send(body).await.map_err(|e| e.to_string())?;
        match conn.next().await {
            Some(Ok(reply)) => Ok(reply.to_vec()),
            Some(Err(e)) => Err(e.to_string()),
            None => Err("connection closed".into()),
        }
    }

    /// Sends one typed request and decodes the reply.
    pub async fn request(&self, node: &str, req: &Request) -> Result<Response, ClientError> {
        let x = self.call(node, req.to_json()).await?;
        serde_json::from_slice(&x.response).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn expect(&self, node: &str, req: Request, ok: fn(&Response) -> bool) -> Result<Response, ClientError> {
        match self.request(node, &req).await? {
            Response::Error { code, detail } => Err(ClientError::Node { code, detail }),
            r if ok(&r) => Ok(r),
            _ => Err(ClientError::Unexpected),
        }
    }

    pub async fn health(&self, node: &str) -> Result<Response, ClientError> {
        self.expect(node, Request::Health, |r| matches!(r, Response::HealthOk { .. })).await
    }

    pub async fn stats(&self, node: &str) -> Result<Response, ClientError> {
        self.expect(node, Request::Stats, |r| matches!(r, Response::StatsOk { .. })).await
    }

    pub async fn reset(&self, node: &str) -> Result<(), ClientError> {
        self.expect(node, Request::Reset, |r| *r == Response::ResetOk).await.map(|_| ())
    }

    pub async fn delete_session(&self, node: &str, session: SessionRef) -> Result<(), ClientError> {
        self.expect(node, Request::DeleteSession(session), |r| *r == Response::DeleteOk)
            .await
            .map(|_| ())
    }

    /// Drops cached connections, e.g. after a node restart.
    pub async fn disconnect(&self) {
        self.conns.lock().await.clear();
    }
}

impl NodeLink for TcpNodeLink {
    async fn call(&self, node: &str, body: Vec<u8>) -> Result<Exchange, ClientError> {
        let body = Bytes::from(body);
        let started = Instant::now();
        let mut conns = self.conns.lock().await;
        let cached = conns.remove(node);
        let fresh = cached.is_none();
        let mut conn = match cached {
            Some(c) => c,
            None => self.connect(node).await?,
        };
        let reply = match Self::exchange(&mut conn, body.clone()).await {
            Ok(r) => r,
            Err(_) if !fresh => {
                conn = self.connect(node).await?;
                Self::exchange(&mut conn, body).await.map_err(ClientError::Transport)?
            }
            Err(e) => return Err(ClientError::Transport(e)),
        };
        conns.insert(node.to_string(), conn);
        Ok(Exchange { response: reply, elapsed: started.elapsed().as_nanos() as u64 })
    }
}
