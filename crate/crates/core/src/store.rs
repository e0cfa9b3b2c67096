//! In-memory replicated key-value store with keygroup-scoped asynchronous
//! replication.
//!
//! The store is sans-IO: writes return the replica frames that must be sent
//! to the other keygroup members, and received frames are handed to
//! [`ReplicatedStore::apply_remote`]. The caller owns the transport.
//!
//! Updates are ordered by `(epoch, op, version, origin_node)`, compared
//! lexicographically, and the larger one wins. A delete opens a new epoch,
//! so it dominates every put of the incarnation it removes, while puts made
//! after the delete (same epoch as the tombstone) dominate the tombstone.
//! Within one epoch and op, higher versions win and equal versions are
//! broken by the lexicographically larger origin node id.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{self, DecodeError, Reader};

const UPDATE_FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("no keygroup for model {0}")]
    NoKeygroup(String),
    #[error("node {node} is not a member of keygroup {model}")]
    NotMember { node: String, model: String },
    #[error("keygroup {0} already exists with different members")]
    Config(String),
    #[error("malformed replica update: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedValue {
    pub bytes: Vec<u8>,
    pub version: u64,
    pub origin_node: String,
    pub expires_at_ms: u64,
    /// Incarnation counter, bumped by deletes. Local puts inherit the epoch
    /// of whatever the node currently holds for the key.
    pub epoch: u64,
}

impl VersionedValue {
    pub fn new(bytes: Vec<u8>, version: u64, origin_node: impl Into<String>, expires_at_ms: u64) -> Self {
        Self { bytes, version, origin_node: origin_node.into(), expires_at_ms, epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UpdateOp {
    Delete,
    Put,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaUpdate {
    pub model_id: String,
    pub key: String,
    pub op: UpdateOp,
    pub value: VersionedValue,
}

impl ReplicaUpdate {
    /// Frame body (without length prefix):
    /// `u8 format, u8 op, str model, str key, varint epoch, varint version,
    /// str origin, varint expires_at_ms, blob value`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.key.len() + self.value.bytes.len());
        out.push(UPDATE_FORMAT_VERSION);
        out.push(match self.op {
            UpdateOp::Delete => 0,
            UpdateOp::Put => 1,
        });
        codec::put_str(&mut out, &self.model_id);
        codec::put_str(&mut out, &self.key);
        codec::put_varint(&mut out, self.value.epoch);
        codec::put_varint(&mut out, self.value.version);
        codec::put_str(&mut out, &self.value.origin_node);
        codec::put_varint(&mut out, self.value.expires_at_ms);
        codec::put_bytes(&mut out, &self.value.bytes);
        out
    }

    pub fn decode(body: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(body);
        let format = r.u8()?;
        if format != UPDATE_FORMAT_VERSION {
            return Err(DecodeError::Invalid { field: "update format", value: u64::from(format) });
        }
        let op = match r.u8()? {
            0 => UpdateOp::Delete,
            1 => UpdateOp::Put,
            other => return Err(DecodeError::Invalid { field: "op", value: u64::from(other) }),
        };
        let model_id = r.string()?;
        let key = r.string()?;
        let epoch = r.varint()?;
        let version = r.varint()?;
        let origin_node = r.string()?;
        let expires_at_ms = r.varint()?;
        let bytes = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self {
            model_id,
            key,
            op,
            value: VersionedValue { bytes, version, origin_node, expires_at_ms, epoch },
        })
    }

    fn order(&self) -> (u64, UpdateOp, u64, &str) {
        (self.value.epoch, self.op, self.value.version, &self.value.origin_node)
    }
}

/// An encoded replica update (frame body, no length prefix) addressed to
/// one peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub peer: String,
    pub body: Vec<u8>,
}

impl Outbound {
    /// Bytes on the wire, length prefix included.
    pub fn wire_len(&self) -> usize {
        self.body.len() + codec::LENGTH_PREFIX
    }
}

/// Cumulative sync traffic of one node, in frame bytes including the
/// length prefix, keyed by peer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncCounters {
    pub sent: BTreeMap<String, u64>,
    pub received: BTreeMap<String, u64>,
}

impl SyncCounters {
    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PutOutcome {
    pub applied: bool,
    pub outbound: Vec<Outbound>,
}

/// Replicated state of one key: (epoch, op, version, origin, bytes).
pub type EntryState = (u64, UpdateOp, u64, String, Vec<u8>);

#[derive(Debug)]
pub struct ReplicatedStore {
    node_id: String,
    keygroups: BTreeMap<String, BTreeSet<String>>,
    entries: BTreeMap<String, ReplicaUpdate>,
    tombstone_ttl_ms: u64,
    counters: SyncCounters,
}

impl ReplicatedStore {
    pub fn new(node_id: impl Into<String>, tombstone_ttl_ms: u64) -> Self {
        Self {
            node_id: node_id.into(),
            keygroups: BTreeMap::new(),
            entries: BTreeMap::new(),
            tombstone_ttl_ms,
            counters: SyncCounters::default(),
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn create_keygroup<I, S>(&mut self, model_id: &str, members: I) -> Result<(), StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let members: BTreeSet<String> = members.into_iter().map(Into::into).collect();
        match self.keygroups.get(model_id) {
            Some(existing) if *existing != members => Err(StoreError::Config(model_id.to_string())),
            Some(_) => Ok(()),
            None => {
                self.keygroups.insert(model_id.to_string(), members);
                Ok(())
            }
        }
    }

    pub fn keygroup(&self, model_id: &str) -> Option<&BTreeSet<String>> {
        self.keygroups.get(model_id)
    }

    fn check_member(&self, model_id: &str) -> Result<&BTreeSet<String>, StoreError> {
        let members = self
            .keygroups
            .get(model_id)
            .ok_or_else(|| StoreError::NoKeygroup(model_id.to_string()))?;
        if !members.contains(&self.node_id) {
            return Err(StoreError::NotMember {
                node: self.node_id.clone(),
                model: model_id.to_string(),
            });
        }
        Ok(members)
    }

    fn live_entry(&mut self, key: &str, now_ms: u64) -> Option<&ReplicaUpdate> {
        if self.entries.get(key).is_some_and(|e| now_ms >= e.value.expires_at_ms) {
            self.entries.remove(key);
        }
        self.entries.get(key)
    }

    /// Applies `update` if it orders after the current entry.
    fn apply(&mut self, update: ReplicaUpdate, now_ms: u64) -> bool {
        if now_ms >= update.value.expires_at_ms {
            return false;
        }
        if let Some(current) = self.live_entry(&update.key, now_ms) {
            if update.order() <= current.order() {
                return false;
            }
        }
        self.entries.insert(update.key.clone(), update);
        true
    }

    fn fan_out(&mut self, update: &ReplicaUpdate) -> Vec<Outbound> {
        let Some(members) = self.keygroups.get(&update.model_id) else {
            return Vec::new();
        };
        let body = update.encode();
        let wire_len = (body.len() + codec::LENGTH_PREFIX) as u64;
        let peers: Vec<String> = members.iter().filter(|m| **m != self.node_id).cloned().collect();
        peers
            .into_iter()
            .map(|peer| {
                *self.counters.sent.entry(peer.clone()).or_default() += wire_len;
                Outbound { peer, body: body.clone() }
            })
            .collect()
    }

    /// Local write. Applied synchronously; the returned frames carry the
    /// update to the other keygroup members.
    pub fn put(
        &mut self,
        model_id: &str,
        key: &str,
        mut value: VersionedValue,
        now_ms: u64,
    ) -> Result<PutOutcome, StoreError> {
        self.check_member(model_id)?;
        value.epoch = self.entries.get(key).map_or(0, |e| e.value.epoch);
        let update = ReplicaUpdate {
            model_id: model_id.to_string(),
            key: key.to_string(),
            op: UpdateOp::Put,
            value,
        };
        if !self.apply(update.clone(), now_ms) {
            return Ok(PutOutcome { applied: false, outbound: Vec::new() });
        }
        let outbound = self.fan_out(&update);
        Ok(PutOutcome { applied: true, outbound })
    }

    /// Writes a tombstone one version above the local one.
    pub fn delete(&mut self, model_id: &str, key: &str, now_ms: u64) -> Result<PutOutcome, StoreError> {
        self.check_member(model_id)?;
        let (epoch, version) = self
            .live_entry(key, now_ms)
            .map_or((0, 0), |e| (e.value.epoch, e.value.version));
        let update = ReplicaUpdate {
            model_id: model_id.to_string(),
            key: key.to_string(),
            op: UpdateOp::Delete,
            value: VersionedValue {
                bytes: Vec::new(),
                version: version + 1,
                origin_node: self.node_id.clone(),
                expires_at_ms: now_ms + self.tombstone_ttl_ms,
                epoch: epoch + 1,
            },
        };
        let applied = self.apply(update.clone(), now_ms);
        let outbound = if applied { self.fan_out(&update) } else { Vec::new() };
        Ok(PutOutcome { applied, outbound })
    }

    /// Local replica read. Expired values are purged; tombstones read as
    /// absent.
    pub fn get(&mut self, key: &str, now_ms: u64) -> Option<VersionedValue> {
        match self.live_entry(key, now_ms) {
            Some(e) if e.op == UpdateOp::Put => Some(e.value.clone()),
            _ => None,
        }
    }

    /// Handles one received frame body from `from`. `frame_len` is the size
    /// on the wire including the length prefix. Returns whether the update
    /// changed local state.
    pub fn apply_remote(
        &mut self,
        from: &str,
        body: &[u8],
        frame_len: usize,
        now_ms: u64,
    ) -> Result<bool, StoreError> {
        *self.counters.received.entry(from.to_string()).or_default() += frame_len as u64;
        let update = ReplicaUpdate::decode(body)?;
        self.check_member(&update.model_id)?;
        Ok(self.apply(update, now_ms))
    }

    /// Drops expired values and tombstones.
    pub fn purge_expired(&mut self, now_ms: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| now_ms < e.value.expires_at_ms);
        before - self.entries.len()
    }

    pub fn sync_bytes(&self) -> &SyncCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = SyncCounters::default();
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.counters = SyncCounters::default();
    }

    /// Unexpired replicated state, tombstones included.
    pub fn snapshot(&self, now_ms: u64) -> BTreeMap<String, EntryState> {
        self.entries
            .iter()
            .filter(|(_, e)| now_ms < e.value.expires_at_ms)
            .map(|(k, e)| {
                (
                    k.clone(),
                    (e.value.epoch, e.op, e.value.version, e.value.origin_node.clone(), e.value.bytes.clone()),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: u64 = 1_000;
    const TTL: u64 = 60_000;

    fn store(node: &str, members: &[&str]) -> ReplicatedStore {
        let mut s = ReplicatedStore::new(node, TTL);
        s.create_keygroup("m", members.iter().copied()).unwrap();
        s
    }

    fn value(version: u64, origin: &str, bytes: &[u8]) -> VersionedValue {
        VersionedValue::new(bytes.to_vec(), version, origin, T + TTL)
    }

    fn deliver(to: &mut ReplicatedStore, from: &str, out: &[Outbound]) {
        let me = to.node_id().to_string();
        for o in out.iter().filter(|o| o.peer == me) {
            to.apply_remote(from, &o.body, o.wire_len(), T).unwrap();
        }
    }

    #[test]
    fn put_fans_out_to_members() {
        let mut a = store("A", &["A", "B"]);
        let mut b = store("B", &["A", "B"]);
        let out = a.put("m", "k", value(1, "A", b"ctx"), T).unwrap();
        assert!(out.applied);
        assert_eq!(out.outbound.len(), 1);
        assert_eq!(out.outbound[0].peer, "B");
        assert_eq!(b.get("k", T), None);
        deliver(&mut b, "A", &out.outbound);
        assert_eq!(b.get("k", T).unwrap().bytes, b"ctx");
    }

    #[test]
    fn singleton_group_replicates_nowhere() {
        let mut a = store("A", &["A"]);
        assert!(a.put("m", "k", value(1, "A", b"x"), T).unwrap().outbound.is_empty());
        assert_eq!(a.sync_bytes().total_sent(), 0);
    }

    #[test]
    fn unknown_keygroup() {
        let mut a = store("A", &["A"]);
        assert_eq!(
            a.put("other", "k", value(1, "A", b"x"), T),
            Err(StoreError::NoKeygroup("other".into()))
        );
        assert!(matches!(a.delete("other", "k", T), Err(StoreError::NoKeygroup(_))));
    }

    #[test]
    fn conflicting_keygroup_config() {
        let mut a = store("A", &["A", "B"]);
        assert!(a.create_keygroup("m", ["A", "B"]).is_ok());
        assert_eq!(a.create_keygroup("m", ["A"]), Err(StoreError::Config("m".into())));
    }

    #[test]
    fn higher_version_wins() {
        let mut a = store("A", &["A", "B"]);
        let mut b = store("B", &["A", "B"]);
        a.put("m", "k", value(1, "A", b"v1"), T).unwrap();
        let v2 = b.put("m", "k", value(2, "B", b"v2"), T).unwrap();
        deliver(&mut a, "B", &v2.outbound);
        assert_eq!(a.get("k", T).unwrap().version, 2);

        let late = store("C", &["A", "B", "C"]).put("m", "k", value(1, "C", b"v1"), T).unwrap();
        let o = &late.outbound[0];
        assert!(!a.apply_remote("C", &o.body, o.wire_len(), T).unwrap());
        assert_eq!(a.get("k", T).unwrap().bytes, b"v2");
    }

    #[test]
    fn equal_versions_break_by_origin() {
        let mut a = store("a", &["a", "b"]);
        let mut b = store("b", &["a", "b"]);
        let from_a = a.put("m", "k", value(3, "a", b"A"), T).unwrap();
        let from_b = b.put("m", "k", value(3, "b", b"B"), T).unwrap();
        deliver(&mut a, "b", &from_b.outbound);
        deliver(&mut b, "a", &from_a.outbound);
        assert_eq!(a.get("k", T).unwrap().bytes, b"B");
        assert_eq!(a.snapshot(T), b.snapshot(T));
    }

    #[test]
    fn delete_replicates_and_allows_new_incarnation() {
        let mut a = store("A", &["A", "B"]);
        let mut b = store("B", &["A", "B"]);
        let p = a.put("m", "k", value(4, "A", b"old"), T).unwrap();
        deliver(&mut b, "A", &p.outbound);
        let d = a.delete("m", "k", T).unwrap();
        deliver(&mut b, "A", &d.outbound);
        assert_eq!(a.get("k", T), None);
        assert_eq!(b.get("k", T), None);
        assert_eq!(a.snapshot(T)["k"].2, 5);

        // a fresh session under the same key restarts at version 1
        let fresh = b.put("m", "k", value(1, "B", b"new"), T).unwrap();
        assert!(fresh.applied);
        deliver(&mut a, "B", &fresh.outbound);
        assert_eq!(a.get("k", T).unwrap().bytes, b"new");
        assert_eq!(a.snapshot(T), b.snapshot(T));

        // a straggler from the deleted incarnation stays dead
        let straggler = ReplicaUpdate {
            model_id: "m".into(),
            key: "k".into(),
            op: UpdateOp::Put,
            value: value(9, "Z", b"zombie"),
        };
        let body = straggler.encode();
        assert!(!a.apply_remote("B", &body, body.len() + 4, T).unwrap());
    }

    #[test]
    fn delete_of_absent_key() {
        let mut a = store("A", &["A"]);
        let d = a.delete("m", "k", T).unwrap();
        assert!(d.applied);
        let snap = a.snapshot(T);
        assert_eq!((snap["k"].1, snap["k"].2), (UpdateOp::Delete, 1));
        assert_eq!(a.get("k", T), None);
    }

    #[test]
    fn expired_values_read_absent() {
        let mut a = store("A", &["A"]);
        a.put("m", "k", VersionedValue::new(b"x".to_vec(), 1, "A", T + 100), T).unwrap();
        assert!(a.get("k", T + 99).is_some());
        assert_eq!(a.get("k", T + 100), None);
        assert!(a.snapshot(T).is_empty());
    }

    #[test]
    fn counters_include_length_prefix() {
        let mut a = store("A", &["A", "B"]);
        assert_eq!(a.sync_bytes().total_sent(), 0);
        let out = a.put("m", "k", value(1, "A", b"payload"), T).unwrap();
        let body_len = out.outbound[0].body.len();
        let update = ReplicaUpdate::decode(&out.outbound[0].body).unwrap();
        assert_eq!(update.encode().len(), body_len);
        assert_eq!(a.sync_bytes().sent["B"], (body_len + 4) as u64);
        a.reset_counters();
        assert_eq!(a.sync_bytes().total_sent(), 0);
    }

    #[test]
    fn non_member_rejects_remote_updates() {
        let mut a = store("A", &["A", "B"]);
        let mut c = store("C", &["A", "B"]);
        let out = a.put("m", "k", value(1, "A", b"x"), T).unwrap();
        assert!(matches!(
            c.apply_remote("A", &out.outbound[0].body, 10, T),
            Err(StoreError::NotMember { .. })
        ));
        assert!(c.snapshot(T).is_empty());
    }
}
