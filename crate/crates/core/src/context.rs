//! Versioned session context and its canonical binary frame.
//!
//! Frame layout (all integers unsigned LEB128, strings/blobs length-prefixed
//! by a varint):
//!
//! ```text
//! u8      format version (1)
//! u8      storage mode (0 = raw, 1 = tokenized)
//! varint  context version (completed turns)
//! varint  expires_at, ms since unix epoch
//! str     model_id
//! str     user_id
//! str     session_id
//! str     origin_node
//! varint  turn count
//! turn*   u8 role (0 system, 1 user, 2 assistant), blob payload
//! ```
//!
//! A raw payload is UTF-8 text; a tokenized payload is `encode_tokens`
//! output. The same frame is the value replicated between nodes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, DecodeError, Reader};
use crate::tokenizer::{self, TokenSequence, Vocab};

pub const FRAME_FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("invalid context key: {0}")]
    InvalidKey(String),
    #[error("payload form does not match {expected:?} context")]
    Mode { expected: StorageMode },
    #[error("cannot serialize context: {0}")]
    Serialization(String),
    #[error("unsupported context frame version {0}")]
    Version(u8),
    #[error("malformed context frame: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub model_id: String,
    pub user_id: String,
    pub session_id: String,
}

impl ContextKey {
    pub fn new(
        model_id: impl Into<String>,
        user_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self, ContextError> {
        let key = Self {
            model_id: model_id.into(),
            user_id: user_id.into(),
            session_id: session_id.into(),
        };
        for (name, part) in [
            ("model_id", &key.model_id),
            ("user_id", &key.user_id),
            ("session_id", &key.session_id),
        ] {
            if part.is_empty() {
                return Err(ContextError::InvalidKey(format!("{name} is empty")));
            }
            if part.contains('/') {
                return Err(ContextError::InvalidKey(format!("{name} contains '/'")));
            }
        }
        Ok(key)
    }

    /// `model_id/user_id/session_id`
    pub fn storage_key(&self) -> String {
        format!("{}/{}/{}", self.model_id, self.user_id, self.session_id)
    }

    pub fn parse(storage_key: &str) -> Result<Self, ContextError> {
        let mut parts = storage_key.split('/');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(u), Some(s), None) => Self::new(m, u, s),
            _ => Err(ContextError::InvalidKey(storage_key.to_string())),
        }
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model_id, self.user_id, self.session_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::System => 0,
            Role::User => 1,
            Role::Assistant => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, DecodeError> {
        match code {
            0 => Ok(Role::System),
            1 => Ok(Role::User),
            2 => Ok(Role::Assistant),
            other => Err(DecodeError::Invalid { field: "role", value: u64::from(other) }),
        }
    }

    /// Text that opens a turn of this role.
    pub fn marker(self) -> &'static str {
        match self {
            Role::System => "<|system|>\n",
            Role::User => "<|user|>\n",
            Role::Assistant => "<|assistant|>\n",
        }
    }
}

/// Marker bodies as they appear in the vocab.
pub const ROLE_MARKERS: [&str; 3] = ["<|system|>", "<|user|>", "<|assistant|>"];
const TURN_END: &str = "\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    Raw,
    Tokenized,
}

impl StorageMode {
    fn code(self) -> u8 {
        match self {
            StorageMode::Raw => 0,
            StorageMode::Tokenized => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Text(String),
    Tokens(TokenSequence),
}

impl Payload {
    pub fn mode(&self) -> StorageMode {
        match self {
            Payload::Text(_) => StorageMode::Raw,
            Payload::Tokens(_) => StorageMode::Tokenized,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::Text(t) => t.as_bytes().to_vec(),
            Payload::Tokens(ids) => tokenizer::encode_tokens(ids),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionContext {
    pub key: ContextKey,
    pub mode: StorageMode,
    pub version: u64,
    pub turns: Vec<Turn>,
    pub expires_at_ms: u64,
    pub origin_node: String,
}

/// History rendered for the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rendered {
    Text(String),
    Tokens(TokenSequence),
}

impl SessionContext {
    /// Version-0 context, optionally seeded with a system turn.
    pub fn new(
        key: ContextKey,
        mode: StorageMode,
        system: Option<Payload>,
        expires_at_ms: u64,
        origin_node: impl Into<String>,
    ) -> Result<Self, ContextError> {
        let mut turns = Vec::new();
        if let Some(payload) = system {
            if payload.mode() != mode {
                return Err(ContextError::Mode { expected: mode });
            }
            turns.push(Turn { role: Role::System, payload });
        }
        Ok(Self {
            key,
            mode,
            version: 0,
            turns,
            expires_at_ms,
            origin_node: origin_node.into(),
        })
    }

    pub fn has_system(&self) -> bool {
        self.turns.first().is_some_and(|t| t.role == Role::System)
    }

    /// Returns a new context with one more completed interaction. `self` is
    /// left untouched.
    pub fn append_turn(&self, user: Payload, assistant: Payload) -> Result<Self, ContextError> {
        if user.mode() != self.mode || assistant.mode() != self.mode {
            return Err(ContextError::Mode { expected: self.mode });
        }
        let mut next = self.clone();
        next.turns.push(Turn { role: Role::User, payload: user });
        next.turns.push(Turn { role: Role::Assistant, payload: assistant });
        next.version += 1;
        Ok(next)
    }

    pub fn with_lease(mut self, origin_node: impl Into<String>, expires_at_ms: u64) -> Self {
        self.origin_node = origin_node.into();
        self.expires_at_ms = expires_at_ms;
        self
    }

    /// Checks the structural invariants: uniform payload form, optional
    /// leading system turn, then alternating user/assistant pairs, exactly
    /// `version` of them.
    pub fn validate(&self) -> Result<(), ContextError> {
        if let Some(bad) = self.turns.iter().find(|t| t.payload.mode() != self.mode) {
            return Err(ContextError::Serialization(format!(
                "{:?} payload in {:?} context",
                bad.payload.mode(),
                self.mode
            )));
        }
        let body = if self.has_system() { &self.turns[1..] } else { &self.turns[..] };
        if body.len() as u64 != 2 * self.version {
            return Err(ContextError::Serialization(format!(
                "version {} but {} conversation turns",
                self.version,
                body.len()
            )));
        }
        for (i, turn) in body.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(ContextError::Serialization(format!(
                    "turn {i} has role {:?}, expected {expected:?}",
                    turn.role
                )));
            }
        }
        Ok(())
    }
}

pub fn serialize_context(ctx: &SessionContext) -> Result<Vec<u8>, ContextError> {
    ctx.validate()?;
    let mut out = Vec::with_capacity(64 + ctx.turns.len() * 32);
    out.push(FRAME_FORMAT_VERSION);
    out.push(ctx.mode.code());
    codec::put_varint(&mut out, ctx.version);
    codec::put_varint(&mut out, ctx.expires_at_ms);
    codec::put_str(&mut out, &ctx.key.model_id);
    codec::put_str(&mut out, &ctx.key.user_id);
    codec::put_str(&mut out, &ctx.key.session_id);
    codec::put_str(&mut out, &ctx.origin_node);
    codec::put_varint(&mut out, ctx.turns.len() as u64);
    for turn in &ctx.turns {
        out.push(turn.role.code());
        codec::put_bytes(&mut out, &turn.payload.to_bytes());
    }
    Ok(out)
}

pub fn deserialize_context(bytes: &[u8]) -> Result<SessionContext, ContextError> {
    let mut r = Reader::new(bytes);
    let format = r.u8()?;
    if format != FRAME_FORMAT_VERSION {
        return Err(ContextError::Version(format));
    }
    let mode = match r.u8()? {
        0 => StorageMode::Raw,
        1 => StorageMode::Tokenized,
        other => {
            return Err(DecodeError::Invalid { field: "mode", value: u64::from(other) }.into());
        }
    };
    let version = r.varint()?;
    let expires_at_ms = r.varint()?;
    let key = ContextKey::new(r.string()?, r.string()?, r.string()?)?;
    let origin_node = r.string()?;
    let count = r.varint()?;
    let mut turns = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let role = Role::from_code(r.u8()?)?;
        let at = r.position();
        let raw = r.bytes()?;
        let payload = match mode {
            StorageMode::Raw => Payload::Text(
                String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::Utf8(at))?,
            ),
            StorageMode::Tokenized => Payload::Tokens(tokenizer::decode_tokens(raw)?),
        };
        turns.push(Turn { role, payload });
    }
    r.finish()?;
    let ctx = SessionContext { key, mode, version, turns, expires_at_ms, origin_node };
    ctx.validate()?;
    Ok(ctx)
}

/// Renders the conversation with role markers: `marker payload \n` per turn.
/// Tokenized contexts are rendered by concatenating stored ids with the
/// tokenized markers, never re-tokenizing payloads.
pub fn render_history(ctx: &SessionContext, vocab: &Vocab) -> Rendered {
    match ctx.mode {
        StorageMode::Raw => {
            let mut out = String::new();
            for turn in &ctx.turns {
                if let Payload::Text(text) = &turn.payload {
                    push_text_turn(&mut out, turn.role, text);
                }
            }
            Rendered::Text(out)
        }
        StorageMode::Tokenized => {
            let end = vocab.tokenize(TURN_END);
            let mut out = TokenSequence::new();
            for turn in &ctx.turns {
                if let Payload::Tokens(ids) = &turn.payload {
                    out.extend_from(&vocab.tokenize(turn.role.marker()));
                    out.extend_from(ids);
                    out.extend_from(&end);
                }
            }
            Rendered::Tokens(out)
        }
    }
}

pub fn push_text_turn(out: &mut String, role: Role, text: &str) {
    out.push_str(role.marker());
    out.push_str(text);
    out.push_str(TURN_END);
}

/// Renders plain-text turns the same way `render_history` renders a raw
/// context.
pub fn render_text<'a>(turns: impl IntoIterator<Item = (Role, &'a str)>) -> String {
    let mut out = String::new();
    for (role, text) in turns {
        push_text_turn(&mut out, role, text);
    }
    out
}

/// The part of the engine input that follows the history when the new
/// prompt is sent as text: `prompt \n <|assistant|>\n`. The user marker that
/// opens the turn is part of the context.
pub fn prompt_tail(prompt: &str) -> String {
    format!("{prompt}{TURN_END}{}", Role::Assistant.marker())
}
