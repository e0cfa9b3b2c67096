//! Node API messages. On sockets each message is UTF-8 JSON inside a
//! length-prefixed frame; the HTTP surface carries the same bodies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::context::{Role, StorageMode};
use crate::engine::GenerationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Raw,
    Tokenized,
    ClientSide,
}

impl ContextMode {
    pub fn storage(self) -> Option<StorageMode> {
        match self {
            ContextMode::Raw => Some(StorageMode::Raw),
            ContextMode::Tokenized => Some(StorageMode::Tokenized),
            ContextMode::ClientSide => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::Raw => "raw",
            ContextMode::Tokenized => "tokenized",
            ContextMode::ClientSide => "client_side",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(ContextMode::Raw),
            "tokenized" => Some(ContextMode::Tokenized),
            "client_side" => Some(ContextMode::ClientSide),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub turn: u64,
    pub mode: ContextMode,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryEntry>>,
    /// Optional system prompt. Stored with the context on turn 1 in the
    /// edge-side modes; sent on every turn in client-side mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Fresh,
    StaleServed,
    Created,
}

impl Consistency {
    pub fn as_str(self) -> &'static str {
        match self {
            Consistency::Fresh => "fresh",
            Consistency::StaleServed => "stale_served",
            Consistency::Created => "created",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub tokenize_ms: f64,
    pub inference_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub tokens: Vec<u32>,
    pub tokens_generated: u32,
    pub turn: u64,
    pub user_id: String,
    pub session_id: String,
    pub consistency: Consistency,
    pub retries: u32,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRef {
    #[serde(rename = "model")]
    pub model_id: String,
    pub user_id: String,
    pub session_id: String,
}

/// Engine-level completion with an optional pre-tokenized context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCompletionRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(default)]
    pub context: Option<Vec<u32>>,
    pub prompt: String,
    #[serde(flatten)]
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCompletionResponse {
    pub tokens: Vec<u32>,
    pub text: String,
    pub input_token_count: usize,
    pub tokenize_ms: f64,
    pub prefill_ms: f64,
    pub decode_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Completion(CompletionRequest),
    DeleteSession(SessionRef),
    Health,
    Stats,
    Reset,
    Tokenize {
        #[serde(rename = "model")]
        model_id: String,
        text: String,
    },
    EngineCompletion(EngineCompletionRequest),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    ModelNotServed,
    ModeMismatch,
    StaleContext,
    TurnConflict,
    NoKeygroup,
    CorruptContext,
    Engine,
    Transport,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::ModelNotServed => "model_not_served",
            ErrorCode::ModeMismatch => "mode_mismatch",
            ErrorCode::StaleContext => "stale_context",
            ErrorCode::TurnConflict => "turn_conflict",
            ErrorCode::NoKeygroup => "no_keygroup",
            ErrorCode::CorruptContext => "corrupt_context",
            ErrorCode::Engine => "engine",
            ErrorCode::Transport => "transport",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    CompletionOk(CompletionResponse),
    DeleteOk,
    HealthOk {
        node_id: String,
        models: Vec<String>,
    },
    StatsOk {
        node_id: String,
        sync_sent: BTreeMap<String, u64>,
        sync_received: BTreeMap<String, u64>,
    },
    ResetOk,
    TokenizeOk {
        tokens: Vec<u32>,
    },
    EngineCompletionOk(EngineCompletionResponse),
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl Request {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("requests always serialize")
    }
}

impl Response {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("responses always serialize")
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Response::Error { code, detail: detail.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_request_wire_shape() {
        let json = r#"{"type":"completion","model":"qwen","user_id":"u","session_id":"s",
            "turn":2,"mode":"client_side","prompt":"hi",
            "history":[{"role":"user","text":"q"},{"role":"assistant","text":"a"}],
            "params":{"seed":123,"temperature":0,"n_predict":128}}"#;
        let req: Request = serde_json::from_str(json).unwrap();
        let Request::Completion(c) = &req else { panic!("wrong variant") };
        assert_eq!(c.mode, ContextMode::ClientSide);
        assert_eq!(c.params.max_tokens, 128);
        assert_eq!(c.history.as_ref().unwrap()[1].role, Role::Assistant);
        let back: Request = serde_json::from_slice(&req.to_json()).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn ids_are_optional() {
        let json = r#"{"type":"completion","model":"qwen","turn":1,"mode":"tokenized",
            "prompt":"hi","params":{"seed":1,"temperature":0.5,"n_predict":4}}"#;
        let Request::Completion(c) = serde_json::from_str(json).unwrap() else { panic!() };
        assert!(c.user_id.is_none() && c.session_id.is_none() && c.history.is_none());
        let out = String::from_utf8(Request::Completion(c).to_json()).unwrap();
        assert!(!out.contains("history"));
    }

    #[test]
    fn engine_request_uses_flat_params() {
        let json = r#"{"type":"engine_completion","model":"qwen","context":[256,10],
            "prompt":"x","seed":123,"temperature":0,"n_predict":8}"#;
        let Request::EngineCompletion(e) = serde_json::from_str(json).unwrap() else { panic!() };
        assert_eq!(e.context, Some(vec![256, 10]));
        assert_eq!(e.params.max_tokens, 8);
    }

    #[test]
    fn error_shape() {
        let out = Response::error(ErrorCode::StaleContext, "local 1 expected 2").to_json();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            r#"{"type":"error","code":"stale_context","detail":"local 1 expected 2"}"#
        );
    }
}
