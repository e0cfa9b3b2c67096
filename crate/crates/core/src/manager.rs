//! Per-node context manager: mode dispatch, the turn-counter freshness
//! check with bounded retries, prompt construction, inference, and the
//! asynchronous write-back of the new turn.
//!
//! The manager is generic over a [`Runtime`] which supplies the clock,
//! sleeping, deferred work and the replica transport. The simulator and the
//! tokio server provide the two implementations.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::context::{
    self, render_history, render_text, ContextError, ContextKey, Payload, Rendered, Role,
    SessionContext, StorageMode,
};
use crate::engine::{CompletionInput, Engine, EngineError, HardwareProfile};
use crate::protocol::{
    CompletionRequest, CompletionResponse, Consistency, ContextMode, EngineCompletionResponse,
    ErrorCode, Request, Response, SessionRef, Timings,
};
use crate::store::{Outbound, ReplicatedStore, StoreError, VersionedValue};
use crate::tokenizer::{load_vocab, TokenSequence, Vocab, VocabError};
use crate::transport::{Nanos, NANOS_PER_MS};

/// Clock, timers and replica transport for one node.
pub trait Runtime: Send + Sync + 'static {
    /// Nanoseconds since the unix epoch (virtual in simulation).
    fn now(&self) -> Nanos;
    fn sleep(&self, duration: Nanos) -> BoxFuture<'static, ()>;
    /// Runs `job` after `delay` without blocking the caller.
    fn defer(&self, delay: Nanos, job: Box<dyn FnOnce() + Send>);
    /// Hands encoded replica updates to the transport.
    fn replicate(&self, from: &str, outbound: Vec<Outbound>);
    /// A new random 128-bit identifier, hex encoded.
    fn fresh_id(&self) -> String;

    fn now_ms(&self) -> u64 {
        self.now() / NANOS_PER_MS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Strong,
    Available,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPolicy {
    #[serde(default)]
    pub mode: PolicyMode,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: f64,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> f64 {
    10.0
}

impl Default for ConsistencyPolicy {
    fn default() -> Self {
        Self { mode: PolicyMode::Strong, max_retries: 3, backoff_ms: 10.0 }
    }
}

impl ConsistencyPolicy {
    pub fn available() -> Self {
        Self { mode: PolicyMode::Available, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Custom(HardwareProfile),
}

impl Default for ProfileRef {
    fn default() -> Self {
        ProfileRef::Named("m2".into())
    }
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<HardwareProfile, EngineError> {
        match self {
            ProfileRef::Named(name) => HardwareProfile::by_name(name),
            ProfileRef::Custom(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    /// Vocab file; the shipped default vocab when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub models: Vec<ModelConfig>,
    /// model id -> member node ids. A served model without an entry forms a
    /// singleton keygroup.
    #[serde(default)]
    pub keygroups: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub policy: ConsistencyPolicy,
    #[serde(default)]
    pub profile: ProfileRef,
    #[serde(default = "default_ttl")]
    pub ttl_s: f64,
    /// Client API listen address (socket mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    /// Replica sync listen address (socket mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_listen: Option<String>,
    /// HTTP/JSON listen address (socket mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_listen: Option<String>,
    /// Sync addresses of the other nodes (socket mode).
    #[serde(default)]
    pub peers: BTreeMap<String, String>,
    /// Scales real sleeps of the timing model in socket mode.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    /// Extra delay before each outgoing replica frame in socket mode, to
    /// emulate a slower inter-node link on localhost.
    #[serde(default)]
    pub sync_delay_ms: f64,
}

fn default_ttl() -> f64 {
    3600.0
}

fn default_time_scale() -> f64 {
    1.0
}

impl NodeConfig {
    pub fn new(node_id: impl Into<String>, models: &[&str]) -> Self {
        Self {
            node_id: node_id.into(),
            models: models.iter().map(|m| ModelConfig { id: m.to_string(), vocab: None }).collect(),
            keygroups: BTreeMap::new(),
            policy: ConsistencyPolicy::default(),
            profile: ProfileRef::default(),
            ttl_s: default_ttl(),
            listen: None,
            sync_listen: None,
            http_listen: None,
            peers: BTreeMap::new(),
            time_scale: 1.0,
            sync_delay_ms: 0.0,
        }
    }

    pub fn members(&self, model_id: &str) -> Vec<String> {
        self.keygroups
            .get(model_id)
            .cloned()
            .unwrap_or_else(|| vec![self.node_id.clone()])
    }

    pub fn validate(&self) -> Result<(), ManagerError> {
        let bad = |m: String| Err(ManagerError::Config(m));
        if self.node_id.is_empty() || self.node_id.contains('/') {
            return bad(format!("invalid node id {:?}", self.node_id));
        }
        for m in &self.models {
            if !self.members(&m.id).contains(&self.node_id) {
                return bad(format!("node {} serves {} but is not in its keygroup", self.node_id, m.id));
            }
        }
        if self.policy.backoff_ms < 0.0 || !self.policy.backoff_ms.is_finite() {
            return bad("backoff_ms must be non-negative".into());
        }
        if self.time_scale < 0.0 || !self.time_scale.is_finite() {
            return bad("time_scale must be non-negative".into());
        }
        if self.sync_delay_ms < 0.0 || !self.sync_delay_ms.is_finite() {
            return bad("sync_delay_ms must be non-negative".into());
        }
        if self.ttl_s <= 0.0 || !self.ttl_s.is_finite() {
            return bad("ttl_s must be positive".into());
        }
        if !self.profile.resolve()?.is_valid() {
            return bad("hardware profile values must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("invalid node config: {0}")]
    Config(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("model {0} is not served by this node")]
    ModelNotServed(String),
    #[error("session is stored in {stored:?} mode, request uses {requested:?}")]
    ModeMismatch { stored: StorageMode, requested: StorageMode },
    #[error("stale context: local version {local}, expected {expected}")]
    StaleContext { local: u64, expected: u64 },
    #[error("turn {turn} conflicts with stored version {stored}")]
    TurnConflict { turn: u64, stored: u64 },
    #[error("a request for this session is already in flight")]
    InFlight,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ManagerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ManagerError::Config(_) | ManagerError::Vocab(_) | ManagerError::InvalidRequest(_) => {
                ErrorCode::InvalidRequest
            }
            ManagerError::ModelNotServed(_) => ErrorCode::ModelNotServed,
            ManagerError::ModeMismatch { .. } => ErrorCode::ModeMismatch,
            ManagerError::StaleContext { .. } => ErrorCode::StaleContext,
            ManagerError::TurnConflict { .. } | ManagerError::InFlight => ErrorCode::TurnConflict,
            ManagerError::Store(_) => ErrorCode::NoKeygroup,
            ManagerError::Context(_) => ErrorCode::CorruptContext,
            ManagerError::Engine(_) => ErrorCode::Engine,
        }
    }
}

/// Result of the freshness check.
#[derive(Debug, Clone, PartialEq)]
pub struct FreshContext {
    /// `None` when nothing is stored for the session.
    pub context: Option<SessionContext>,
    pub retries: u32,
    pub consistency: Consistency,
}

struct SessionGuard<'a> {
    inflight: &'a Mutex<HashSet<String>>,
    key: String,
}

impl Drop for SessionGuard<'_> {
    fn drop(&mut self) {
        self.inflight.lock().expect("inflight lock").remove(&self.key);
    }
}

pub struct ContextManager<R: Runtime> {
    config: NodeConfig,
    engine: Arc<Engine>,
    engine_slot: tokio::sync::Mutex<()>,
    store: Arc<Mutex<ReplicatedStore>>,
    runtime: Arc<R>,
    inflight: Mutex<HashSet<String>>,
}

impl<R: Runtime> ContextManager<R> {
    pub fn new(config: NodeConfig, runtime: Arc<R>) -> Result<Self, ManagerError> {
        config.validate()?;
        let mut engine = Engine::new(config.profile.resolve()?);
        let ttl_ms = (config.ttl_s * 1000.0).round() as u64;
        let mut store = ReplicatedStore::new(config.node_id.clone(), ttl_ms);
        for m in &config.models {
            let vocab = match &m.vocab {
                Some(path) => {
                    let loaded = load_vocab(path)?;
                    Vocab::from_entries(m.id.clone(), loaded.entries().iter().cloned())?
                }
                None => Vocab::default_for(m.id.clone()),
            };
            engine.load(vocab);
        }
        for (model, members) in &config.keygroups {
            store.create_keygroup(model, members.iter().cloned())?;
        }
        for m in &config.models {
            if !config.keygroups.contains_key(&m.id) {
                store.create_keygroup(&m.id, [config.node_id.clone()])?;
            }
        }
        Ok(Self {
            config,
            engine: Arc::new(engine),
            engine_slot: tokio::sync::Mutex::new(()),
            store: Arc::new(Mutex::new(store)),
            runtime,
            inflight: Mutex::new(HashSet::new()),
        })
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn store(&self) -> &Arc<Mutex<ReplicatedStore>> {
        &self.store
    }

    pub fn runtime(&self) -> &Arc<R> {
        &self.runtime
    }

    fn ttl_ms(&self) -> u64 {
        (self.config.ttl_s * 1000.0).round() as u64
    }

    fn serves(&self, model_id: &str) -> bool {
        self.config.models.iter().any(|m| m.id == model_id)
    }

    /// Decodes a JSON request frame body and encodes the JSON reply.
    pub async fn handle_frame(&self, body: &[u8]) -> Vec<u8> {
        let response = match serde_json::from_slice::<Request>(body) {
            Ok(req) => self.handle(req).await,
            Err(e) => Response::error(ErrorCode::InvalidRequest, e.to_string()),
        };
        response.to_json()
    }

    pub async fn handle(&self, req: Request) -> Response {
        let result = match req {
            Request::Completion(c) => self.handle_completion(c).await.map(Response::CompletionOk),
            Request::DeleteSession(s) => self.delete_session(&s).map(|_| Response::DeleteOk),
            Request::Health => Ok(Response::HealthOk {
                node_id: self.config.node_id.clone(),
                models: self.config.models.iter().map(|m| m.id.clone()).collect(),
            }),
            Request::Stats => {
                let store = self.store.lock().expect("store lock");
                Ok(Response::StatsOk {
                    node_id: self.config.node_id.clone(),
                    sync_sent: store.sync_bytes().sent.clone(),
                    sync_received: store.sync_bytes().received.clone(),
                })
            }
            Request::Reset => {
                self.store.lock().expect("store lock").clear();
                Ok(Response::ResetOk)
            }
            Request::Tokenize { model_id, text } => self
                .engine
                .tokenize(&model_id, &text)
                .map(|t| Response::TokenizeOk { tokens: t.into_inner() })
                .map_err(ManagerError::from),
            Request::EngineCompletion(e) => {
                let input = CompletionInput {
                    model_id: e.model_id,
                    context: e.context.map(TokenSequence::from),
                    prompt: e.prompt,
                    params: e.params,
                };
                self.run_engine(&input).await.map(|out| {
                    Response::EngineCompletionOk(EngineCompletionResponse {
                        tokens: out.tokens.into_inner(),
                        text: out.text,
                        input_token_count: out.input_token_count,
                        tokenize_ms: nanos_to_ms(out.timing.tokenize_ns),
                        prefill_ms: nanos_to_ms(out.timing.prefill_ns),
                        decode_ms: nanos_to_ms(out.timing.decode_ns),
                    })
                })
            }
        };
        result.unwrap_or_else(|e| Response::error(e.code(), e.to_string()))
    }

    /// Runs one completion on the node's engine. Completions are served one
    /// at a time in arrival order; the profile's time elapses on the
    /// runtime clock.
    async fn run_engine(&self, input: &CompletionInput) -> Result<crate::engine::CompletionOutput, ManagerError> {
        let _slot = self.engine_slot.lock().await;
        let out = self.engine.complete(input)?;
        self.runtime.sleep(out.timing.total()).await;
        Ok(out)
    }

    fn validate_request(&self, req: &CompletionRequest) -> Result<(), ManagerError> {
        if !self.serves(&req.model_id) {
            return Err(ManagerError::ModelNotServed(req.model_id.clone()));
        }
        if req.params.max_tokens == 0 {
            return Err(ManagerError::InvalidRequest("n_predict must be at least 1".into()));
        }
        if req.turn == 0 {
            return Err(ManagerError::InvalidRequest("turn counter starts at 1".into()));
        }
        match (&req.history, req.mode) {
            (Some(h), ContextMode::ClientSide) => {
                if h.len() as u64 != 2 * (req.turn - 1) {
                    return Err(ManagerError::InvalidRequest(format!(
                        "turn {} needs {} history entries, got {}",
                        req.turn,
                        2 * (req.turn - 1),
                        h.len()
                    )));
                }
                for (i, entry) in h.iter().enumerate() {
                    let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
                    if entry.role != expected {
                        return Err(ManagerError::InvalidRequest(format!(
                            "history entry {i} must have role {expected:?}"
                        )));
                    }
                }
            }
            (None, ContextMode::ClientSide) if req.turn > 1 => {
                return Err(ManagerError::InvalidRequest("client_side mode requires history".into()));
            }
            (Some(_), _) => {
                return Err(ManagerError::InvalidRequest("history is only accepted in client_side mode".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn try_lock_session(&self, key: &ContextKey) -> Result<SessionGuard<'_>, ManagerError> {
        let storage_key = key.storage_key();
        let mut inflight = self.inflight.lock().expect("inflight lock");
        if !inflight.insert(storage_key.clone()) {
            return Err(ManagerError::InFlight);
        }
        Ok(SessionGuard { inflight: &self.inflight, key: storage_key })
    }

    pub async fn handle_completion(&self, mut req: CompletionRequest) -> Result<CompletionResponse, ManagerError> {
        let started = self.runtime.now();
        let missing = |v: &Option<String>| v.as_deref().is_none_or(str::is_empty);
        if missing(&req.user_id) || missing(&req.session_id) {
            if missing(&req.user_id) {
                req.user_id = Some(self.runtime.fresh_id());
            }
            if missing(&req.session_id) {
                req.session_id = Some(self.runtime.fresh_id());
            }
            req.turn = 1;
            if req.mode == ContextMode::ClientSide {
                req.history = Some(Vec::new());
            }
        }
        self.validate_request(&req)?;
        let key = ContextKey::new(
            req.model_id.clone(),
            req.user_id.clone().unwrap_or_default(),
            req.session_id.clone().unwrap_or_default(),
        )?;
        let vocab = Arc::clone(self.engine.vocab(&req.model_id)?);

        let Some(storage) = req.mode.storage() else {
            // client-side: the request carries the whole conversation
            let mut text = String::new();
            if let Some(system) = &req.system {
                context::push_text_turn(&mut text, Role::System, system);
            }
            let history = req.history.as_deref().unwrap_or_default();
            text.push_str(&render_text(history.iter().map(|h| (h.role, h.text.as_str()))));
            text.push_str(Role::User.marker());
            text.push_str(&context::prompt_tail(&req.prompt));
            let input = CompletionInput {
                model_id: req.model_id.clone(),
                context: None,
                prompt: text,
                params: req.params.clone(),
            };
            let out = self.run_engine(&input).await?;
            return Ok(self.response(&req, &key, out, Consistency::Fresh, 0, started));
        };

        let _guard = self.try_lock_session(&key)?;
        let fresh = self.ensure_fresh_context(&key, req.turn - 1, &self.config.policy).await?;
        if let Some(ctx) = &fresh.context {
            if ctx.mode != storage {
                return Err(ManagerError::ModeMismatch { stored: ctx.mode, requested: storage });
            }
        }

        // Text that still has to be tokenized: a new session's system turn,
        // then the new user turn up to the assistant marker.
        let mut text = String::new();
        if fresh.context.is_none() {
            if let Some(system) = &req.system {
                context::push_text_turn(&mut text, Role::System, system);
            }
        }
        text.push_str(Role::User.marker());
        text.push_str(&context::prompt_tail(&req.prompt));

        let input = match fresh.context.as_ref().map(|c| render_history(c, &vocab)) {
            None => CompletionInput {
                model_id: req.model_id.clone(),
                context: (storage == StorageMode::Tokenized).then(TokenSequence::new),
                prompt: text,
                params: req.params.clone(),
            },
            Some(Rendered::Tokens(history)) => CompletionInput {
                model_id: req.model_id.clone(),
                context: Some(history),
                prompt: text,
                params: req.params.clone(),
            },
            Some(Rendered::Text(mut history)) => {
                history.push_str(&text);
                CompletionInput {
                    model_id: req.model_id.clone(),
                    context: None,
                    prompt: history,
                    params: req.params.clone(),
                }
            }
        };
        let out = self.run_engine(&input).await?;

        if fresh.consistency == Consistency::StaleServed {
            // the stale base would break the version == turn sequence
            warn!(node = %self.config.node_id, %key, turn = req.turn, "stale context served, skipping write-back");
        } else {
            self.schedule_write_back(&req, key.clone(), fresh.context.clone(), storage, &vocab, &out.text)?;
        }
        Ok(self.response(&req, &key, out, fresh.consistency, fresh.retries, started))
    }

    fn response(
        &self,
        req: &CompletionRequest,
        key: &ContextKey,
        out: crate::engine::CompletionOutput,
        consistency: Consistency,
        retries: u32,
        started: Nanos,
    ) -> CompletionResponse {
        CompletionResponse {
            tokens_generated: out.tokens.len() as u32,
            tokens: out.tokens.into_inner(),
            text: out.text,
            turn: req.turn,
            user_id: key.user_id.clone(),
            session_id: key.session_id.clone(),
            consistency,
            retries,
            timings: Timings {
                tokenize_ms: nanos_to_ms(out.timing.tokenize_ns),
                inference_ms: nanos_to_ms(out.timing.inference()),
                total_ms: nanos_to_ms(self.runtime.now().saturating_sub(started)),
            },
        }
    }

    /// Builds the next context now and defers the store write by the time
    /// the node needs to tokenize the new pair.
    fn schedule_write_back(
        &self,
        req: &CompletionRequest,
        key: ContextKey,
        base: Option<SessionContext>,
        storage: StorageMode,
        vocab: &Vocab,
        answer: &str,
    ) -> Result<(), ManagerError> {
        let payload = |text: &str| match storage {
            StorageMode::Raw => Payload::Text(text.to_string()),
            StorageMode::Tokenized => Payload::Tokens(vocab.tokenize(text)),
        };
        let mut chars = req.prompt.chars().count() + answer.chars().count();
        let base = match base {
            Some(ctx) => ctx,
            None => {
                let system = req.system.as_deref().map(|s| {
                    chars += s.chars().count();
                    payload(s)
                });
                SessionContext::new(key.clone(), storage, system, 0, self.config.node_id.clone())?
            }
        };
        let expires_at_ms = self.runtime.now_ms() + self.ttl_ms();
        let next = base
            .append_turn(payload(&req.prompt), payload(answer))?
            .with_lease(self.config.node_id.clone(), expires_at_ms);
        debug_assert_eq!(next.version, req.turn);
        let bytes = context::serialize_context(&next)?;
        let delay = match storage {
            StorageMode::Raw => 0,
            StorageMode::Tokenized => self.engine.profile().tokenize_cost(chars),
        };

        let store = Arc::clone(&self.store);
        let runtime = Arc::clone(&self.runtime);
        let node_id = self.config.node_id.clone();
        let value = VersionedValue::new(bytes, next.version, node_id.clone(), expires_at_ms);
        self.runtime.defer(
            delay,
            Box::new(move || {
                let storage_key = key.storage_key();
                for attempt in 0..2 {
                    let now_ms = runtime.now_ms();
                    let result = store
                        .lock()
                        .expect("store lock")
                        .put(&key.model_id, &storage_key, value.clone(), now_ms);
                    match result {
                        Ok(outcome) => {
                            if !outcome.applied {
                                debug!(%node_id, key = %storage_key, "write-back superseded by a newer version");
                            }
                            runtime.replicate(&node_id, outcome.outbound);
                            return;
                        }
                        Err(e) => warn!(%node_id, key = %storage_key, attempt, error = %e, "write-back failed"),
                    }
                }
            }),
        );
        Ok(())
    }

    /// Reads the local replica until it holds exactly `expected_version`
    /// completed turns, sleeping `backoff_ms` between at most `max_retries`
    /// re-reads.
    pub async fn ensure_fresh_context(
        &self,
        key: &ContextKey,
        expected_version: u64,
        policy: &ConsistencyPolicy,
    ) -> Result<FreshContext, ManagerError> {
        let storage_key = key.storage_key();
        let backoff = crate::transport::ms_to_nanos(policy.backoff_ms);
        let mut retries = 0;
        loop {
            let stored = self
                .store
                .lock()
                .expect("store lock")
                .get(&storage_key, self.runtime.now_ms());
            let local = stored.as_ref().map_or(0, |v| v.version);
            if local > expected_version {
                return Err(ManagerError::TurnConflict { turn: expected_version + 1, stored: local });
            }
            if local == expected_version {
                let context = stored.map(|v| context::deserialize_context(&v.bytes)).transpose()?;
                let consistency = if context.is_none() { Consistency::Created } else { Consistency::Fresh };
                return Ok(FreshContext { context, retries, consistency });
            }
            if retries >= policy.max_retries {
                return match policy.mode {
                    PolicyMode::Strong => Err(ManagerError::StaleContext { local, expected: expected_version }),
                    PolicyMode::Available => {
                        let context = stored.map(|v| context::deserialize_context(&v.bytes)).transpose()?;
                        Ok(FreshContext { context, retries, consistency: Consistency::StaleServed })
                    }
                };
            }
            debug!(node = %self.config.node_id, key = %storage_key, local, expected_version, retries, "stale read, backing off");
            retries += 1;
            self.runtime.sleep(backoff).await;
        }
    }

    pub fn delete_session(&self, session: &SessionRef) -> Result<(), ManagerError> {
        let key = ContextKey::new(&session.model_id, &session.user_id, &session.session_id)?;
        let outcome = self.store.lock().expect("store lock").delete(
            &key.model_id,
            &key.storage_key(),
            self.runtime.now_ms(),
        )?;
        self.runtime.replicate(&self.config.node_id, outcome.outbound);
        Ok(())
    }

    /// Applies a replica frame received from `from`.
    pub fn apply_sync_frame(&self, from: &str, body: &[u8], wire_len: usize) -> Result<bool, StoreError> {
        self.store
            .lock()
            .expect("store lock")
            .apply_remote(from, body, wire_len, self.runtime.now_ms())
    }
}

pub fn nanos_to_ms(n: Nanos) -> f64 {
    n as f64 / NANOS_PER_MS as f64
}
