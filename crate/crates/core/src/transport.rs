//! Message transport. [`SimNetwork`] is a discrete-event network on a
//! virtual clock; the socket implementation lives in the server crate and
//! shares the [`FrameTransport`] surface.
//!
//! Every frame costs its payload plus a 4-byte length prefix on the wire,
//! and that is what the byte counters record.

use std::collections::{BTreeMap, VecDeque};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::LENGTH_PREFIX;

/// Virtual time in nanoseconds since the start of a simulation.
pub type Nanos = u64;

pub const NANOS_PER_MS: u64 = 1_000_000;

pub fn ms_to_nanos(ms: f64) -> Nanos {
    (ms.max(0.0) * NANOS_PER_MS as f64).round() as Nanos
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no link from {from} to {to}")]
    Routing { from: String, to: String },
    #[error("operation only available on the simulated network")]
    Mode,
    #[error("invalid link {from}->{to}: {reason}")]
    InvalidLink { from: String, to: String, reason: String },
    #[error("connection to {peer} failed: {message}")]
    Connection { peer: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub partitioned: bool,
}

impl LinkSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>, latency_ms: f64) -> Self {
        Self { from: from.into(), to: to.into(), latency_ms, jitter_ms: 0.0, partitioned: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_delivered: u64,
    pub bytes_delivered: u64,
    pub frames_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryHandle {
    pub from: String,
    pub to: String,
    /// `None` when the frame was dropped by a partition, or when the
    /// delivery time is not known (sockets).
    pub deliver_at: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub from: String,
    pub to: String,
    pub at: Nanos,
    pub payload: Vec<u8>,
}

impl Delivery {
    pub fn wire_len(&self) -> usize {
        self.payload.len() + LENGTH_PREFIX
    }
}

/// Common surface of the simulated and socket transports.
pub trait FrameTransport {
    fn send(&mut self, from: &str, to: &str, payload: Vec<u8>) -> Result<DeliveryHandle, TransportError>;

    fn counters(&self, from: &str, to: &str) -> Option<LinkCounters>;

    /// Advances virtual time, returning the number of frames delivered.
    fn advance_clock(&mut self, _duration: Nanos) -> Result<usize, TransportError> {
        Err(TransportError::Mode)
    }
}

#[derive(Debug)]
struct Link {
    id: usize,
    spec: LinkSpec,
    last_delivery: Nanos,
    counters: LinkCounters,
}

#[derive(Debug)]
struct Pending {
    link: (String, String),
    payload: Vec<u8>,
}

/// Deterministic discrete-event network. Given the jitter seed and the send
/// schedule, the delivery timeline is fixed: frames are delivered in
/// (time, link id, send order) order and never overtake each other on a
/// link.
#[derive(Debug)]
pub struct SimNetwork {
    now: Nanos,
    links: BTreeMap<(String, String), Link>,
    queue: BTreeMap<(Nanos, usize, u64), Pending>,
    inboxes: BTreeMap<String, VecDeque<Delivery>>,
    rng: StdRng,
    seq: u64,
}

impl SimNetwork {
    pub fn new(seed: u64) -> Self {
        Self {
            now: 0,
            links: BTreeMap::new(),
            queue: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            rng: StdRng::seed_from_u64(seed),
            seq: 0,
        }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn add_link(&mut self, spec: LinkSpec) -> Result<(), TransportError> {
        let bad = |reason: &str| TransportError::InvalidLink {
            from: spec.from.clone(),
            to: spec.to.clone(),
            reason: reason.to_string(),
        };
        if !(spec.latency_ms >= 0.0 && spec.latency_ms.is_finite()) {
            return Err(bad("latency must be a non-negative number"));
        }
        if !(spec.jitter_ms >= 0.0 && spec.jitter_ms.is_finite()) {
            return Err(bad("jitter must be a non-negative number"));
        }
        let key = (spec.from.clone(), spec.to.clone());
        let id = self.links.get(&key).map_or(self.links.len(), |l| l.id);
        let (last_delivery, counters) =
            self.links.get(&key).map_or((0, LinkCounters::default()), |l| (l.last_delivery, l.counters));
        self.links.insert(key, Link { id, spec, last_delivery, counters });
        Ok(())
    }

    /// Adds links in both directions with the same parameters.
    pub fn add_duplex(&mut self, a: &str, b: &str, latency_ms: f64, jitter_ms: f64) -> Result<(), TransportError> {
        for (from, to) in [(a, b), (b, a)] {
            self.add_link(LinkSpec { jitter_ms, ..LinkSpec::new(from, to, latency_ms) })?;
        }
        Ok(())
    }

    pub fn set_partitioned(&mut self, from: &str, to: &str, partitioned: bool) -> Result<(), TransportError> {
        let link = self
            .links
            .get_mut(&(from.to_string(), to.to_string()))
            .ok_or_else(|| TransportError::Routing { from: from.into(), to: to.into() })?;
        link.spec.partitioned = partitioned;
        Ok(())
    }

    pub fn link_spec(&self, from: &str, to: &str) -> Option<&LinkSpec> {
        self.links.get(&(from.to_string(), to.to_string())).map(|l| &l.spec)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_due(&self) -> Option<Nanos> {
        self.queue.keys().next().map(|k| k.0)
    }

    /// Delivers the earliest pending frame if it is due at or before
    /// `limit`, moving the clock to its delivery time. The frame is returned
    /// to the caller rather than queued in an inbox.
    pub fn pop_due(&mut self, limit: Nanos) -> Option<Delivery> {
        let (&(at, id, seq), _) = self.queue.iter().next()?;
        if at > limit {
            return None;
        }
        let pending = self.queue.remove(&(at, id, seq)).expect("key just observed");
        self.now = self.now.max(at);
        let link = self.links.get_mut(&pending.link).expect("queued frames have links");
        link.counters.frames_delivered += 1;
        link.counters.bytes_delivered += (pending.payload.len() + LENGTH_PREFIX) as u64;
        Some(Delivery { from: pending.link.0, to: pending.link.1, at, payload: pending.payload })
    }

    /// Moves the clock forward without delivering anything. Never moves
    /// backwards.
    pub fn set_now(&mut self, t: Nanos) {
        self.now = self.now.max(t);
    }

    /// Delivers everything due up to `t` into the destination inboxes.
    pub fn advance_to(&mut self, t: Nanos) -> usize {
        let mut n = 0;
        while let Some(d) = self.pop_due(t) {
            self.inboxes.entry(d.to.clone()).or_default().push_back(d);
            n += 1;
        }
        self.set_now(t);
        n
    }

    pub fn take_inbox(&mut self, node: &str) -> Vec<Delivery> {
        self.inboxes.get_mut(node).map(|q| q.drain(..).collect()).unwrap_or_default()
    }

    pub fn reset_counters(&mut self) {
        for link in self.links.values_mut() {
            link.counters = LinkCounters::default();
        }
    }

    pub fn all_counters(&self) -> BTreeMap<(String, String), LinkCounters> {
        self.links.iter().map(|(k, l)| (k.clone(), l.counters)).collect()
    }
}

impl FrameTransport for SimNetwork {
    fn send(&mut self, from: &str, to: &str, payload: Vec<u8>) -> Result<DeliveryHandle, TransportError> {
        let now = self.now;
        let key = (from.to_string(), to.to_string());
        let link = self
            .links
            .get_mut(&key)
            .ok_or_else(|| TransportError::Routing { from: from.into(), to: to.into() })?;
        link.counters.frames_sent += 1;
        link.counters.bytes_sent += (payload.len() + LENGTH_PREFIX) as u64;
        if link.spec.partitioned {
            link.counters.frames_dropped += 1;
            return Ok(DeliveryHandle { from: key.0, to: key.1, deliver_at: None });
        }
        let jitter = if link.spec.jitter_ms > 0.0 {
            self.rng.gen_range(-link.spec.jitter_ms..=link.spec.jitter_ms)
        } else {
            0.0
        };
        let at = (now + ms_to_nanos(link.spec.latency_ms + jitter)).max(link.last_delivery);
        link.last_delivery = at;
        let id = link.id;
        self.seq += 1;
        self.queue.insert((at, id, self.seq), Pending { link: key.clone(), payload });
        Ok(DeliveryHandle { from: key.0, to: key.1, deliver_at: Some(at) })
    }

    fn counters(&self, from: &str, to: &str) -> Option<LinkCounters> {
        self.links.get(&(from.to_string(), to.to_string())).map(|l| l.counters)
    }

    fn advance_clock(&mut self, duration: Nanos) -> Result<usize, TransportError> {
        let target = self.now + duration;
        Ok(self.advance_to(target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> SimNetwork {
        let mut n = SimNetwork::new(7);
        n.add_link(LinkSpec::new("a", "b", 5.0)).unwrap();
        n
    }

    #[test]
    fn delivery_after_latency() {
        let mut n = net();
        let h = n.send("a", "b", vec![0; 100]).unwrap();
        assert_eq!(h.deliver_at, Some(5 * NANOS_PER_MS));
        assert_eq!(n.counters("a", "b").unwrap().bytes_sent, 104);
        assert_eq!(n.advance_clock(4 * NANOS_PER_MS).unwrap(), 0);
        assert_eq!(n.advance_clock(NANOS_PER_MS).unwrap(), 1);
        let got = n.take_inbox("b");
        assert_eq!(got[0].at, 5 * NANOS_PER_MS);
        assert_eq!(n.pending(), 0);
    }

    #[test]
    fn fifo_per_link() {
        let mut n = net();
        n.send("a", "b", vec![1]).unwrap();
        n.send("a", "b", vec![2]).unwrap();
        n.advance_clock(10 * NANOS_PER_MS).unwrap();
        let got: Vec<u8> = n.take_inbox("b").iter().map(|d| d.payload[0]).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn partitioned_link_drops() {
        let mut n = net();
        n.set_partitioned("a", "b", true).unwrap();
        let h = n.send("a", "b", vec![1, 2, 3]).unwrap();
        assert_eq!(h.deliver_at, None);
        n.advance_clock(100 * NANOS_PER_MS).unwrap();
        assert!(n.take_inbox("b").is_empty());
        let c = n.counters("a", "b").unwrap();
        assert_eq!((c.frames_dropped, c.bytes_delivered), (1, 0));
    }

    #[test]
    fn unknown_link() {
        let mut n = net();
        assert!(matches!(n.send("b", "a", vec![]), Err(TransportError::Routing { .. })));
        assert!(n.add_link(LinkSpec::new("x", "y", -1.0)).is_err());
    }

    #[test]
    fn ties_break_by_link_id() {
        let mut n = net();
        n.add_link(LinkSpec::new("c", "b", 5.0)).unwrap();
        n.send("c", "b", vec![2]).unwrap();
        n.send("a", "b", vec![1]).unwrap();
        n.advance_clock(5 * NANOS_PER_MS).unwrap();
        let got: Vec<u8> = n.take_inbox("b").iter().map(|d| d.payload[0]).collect();
        assert_eq!(got, vec![1, 2]);
    }
}
