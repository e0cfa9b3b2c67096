//! The roaming client: keeps identifiers, the turn counter and a local copy
//! of the conversation, and talks to whichever node the schedule names.

use std::future::Future;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::LENGTH_PREFIX;
use crate::context::Role;
use crate::engine::GenerationParams;
use crate::protocol::{
    CompletionRequest, CompletionResponse, ContextMode, ErrorCode, HistoryEntry, Request, Response,
};
use crate::transport::Nanos;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("node returned {code:?}: {detail}")]
    Node { code: ErrorCode, detail: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error("unexpected response type")]
    Unexpected,
}

impl ClientError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ClientError::Node { code, .. } => *code,
            _ => ErrorCode::Transport,
        }
    }
}

/// One request/response exchange as seen by the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub response: Vec<u8>,
    pub elapsed: Nanos,
}

/// Sends a JSON request body to a node and returns the reply body.
pub trait NodeLink {
    fn call(&self, node: &str, body: Vec<u8>) -> impl Future<Output = Result<Exchange, ClientError>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTurnMetrics {
    pub node: String,
    pub turn: u64,
    /// Request frame size including the length prefix.
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub elapsed: Nanos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSession {
    pub model_id: String,
    pub user_id: Option<String>,
    pub session_id: Option<String>,
    pub turn: u64,
    pub mode: ContextMode,
    pub system: Option<String>,
    pub params: GenerationParams,
    pub local_history: Vec<(Role, String)>,
}

impl ClientSession {
    pub fn new(model_id: impl Into<String>, mode: ContextMode) -> Self {
        Self {
            model_id: model_id.into(),
            user_id: None,
            session_id: None,
            turn: 1,
            mode,
            system: None,
            params: GenerationParams::default(),
            local_history: Vec::new(),
        }
    }

    pub fn with_ids(mut self, user_id: impl Into<String>, session_id: impl Into<String>) -> Self {
        self.user_id = Some(user_id.into());
        self.session_id = Some(session_id.into());
        self
    }

    pub fn build_request(&self, prompt: &str) -> CompletionRequest {
        let history = (self.mode == ContextMode::ClientSide).then(|| {
            self.local_history
                .iter()
                .map(|(role, text)| HistoryEntry { role: *role, text: text.clone() })
                .collect()
        });
        CompletionRequest {
            model_id: self.model_id.clone(),
            user_id: self.user_id.clone(),
            session_id: self.session_id.clone(),
            turn: self.turn,
            mode: self.mode,
            prompt: prompt.to_string(),
            history,
            system: self.system.clone(),
            params: self.params.clone(),
        }
    }

    /// Records a successful turn: adopts server-assigned identifiers,
    /// extends the local history and advances the counter.
    pub fn record(&mut self, prompt: &str, response: &CompletionResponse) {
        self.user_id = Some(response.user_id.clone());
        self.session_id = Some(response.session_id.clone());
        self.local_history.push((Role::User, prompt.to_string()));
        self.local_history.push((Role::Assistant, response.text.clone()));
        self.turn += 1;
    }
}

/// Sends `prompt` to `node`. On success the session advances; on any error
/// it is left untouched so the same turn can be retried.
pub async fn ask<L: NodeLink>(
    session: &mut ClientSession,
    link: &L,
    node: &str,
    prompt: &str,
) -> (Result<CompletionResponse, ClientError>, ClientTurnMetrics) {
    let body = Request::Completion(session.build_request(prompt)).to_json();
    let mut metrics = ClientTurnMetrics {
        node: node.to_string(),
        turn: session.turn,
        request_bytes: (body.len() + LENGTH_PREFIX) as u64,
        response_bytes: 0,
        elapsed: 0,
    };
    let exchange = match link.call(node, body).await {
        Ok(x) => x,
        Err(e) => return (Err(e), metrics),
    };
    metrics.elapsed = exchange.elapsed;
    metrics.response_bytes = (exchange.response.len() + LENGTH_PREFIX) as u64;
    let result = match serde_json::from_slice::<Response>(&exchange.response) {
        Ok(Response::CompletionOk(resp)) => {
            session.record(prompt, &resp);
            Ok(resp)
        }
        Ok(Response::Error { code, detail }) => Err(ClientError::Node { code, detail }),
        Ok(_) => Err(ClientError::Unexpected),
        Err(e) => Err(ClientError::Decode(e.to_string())),
    };
    (result, metrics)
}

/// Turn-indexed node schedule. Turns past the end stay on the last node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(Vec<String>);

impl Schedule {
    pub fn new(nodes: Vec<String>) -> Self {
        Self(nodes)
    }

    pub fn fixed(node: &str) -> Self {
        Self(vec![node.to_string()])
    }

    /// Turns 1-2 on `a`, 3-4 on `b`, 5-6 on `a`, 7-9 on `b`.
    pub fn mobility(a: &str, b: &str) -> Self {
        Self([a, a, b, b, a, a, b, b, b].iter().map(|s| s.to_string()).collect())
    }

    pub fn nodes(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn roam(&self, turn: u64) -> Option<&str> {
        let idx = (turn.max(1) - 1) as usize;
        self.0.get(idx).or_else(|| self.0.last()).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Consistency, Timings};

    fn response(text: &str) -> CompletionResponse {
        CompletionResponse {
            text: text.into(),
            tokens: vec![],
            tokens_generated: 0,
            turn: 1,
            user_id: "u".into(),
            session_id: "s".into(),
            consistency: Consistency::Created,
            retries: 0,
            timings: Timings::default(),
        }
    }

    #[test]
    fn history_only_in_client_side_mode() {
        let mut s = ClientSession::new("qwen", ContextMode::ClientSide);
        for i in 0..4 {
            s.record(&format!("q{i}"), &response("a"));
        }
        assert_eq!(s.turn, 5);
        let req = s.build_request("q5");
        assert_eq!(req.history.as_ref().unwrap().len(), 8);
        assert_eq!(req.user_id.as_deref(), Some("u"));

        let mut t = ClientSession::new("qwen", ContextMode::Tokenized);
        t.record("q", &response("a"));
        assert!(t.build_request("next").history.is_none());
        assert_eq!(t.local_history.len(), 2);
    }

    #[test]
    fn mobility_schedule() {
        let s = Schedule::mobility("A", "B");
        let route: Vec<&str> = (1..=9).map(|t| s.roam(t).unwrap()).collect();
        assert_eq!(route, ["A", "A", "B", "B", "A", "A", "B", "B", "B"]);
        assert_eq!(s.roam(10), Some("B"));
        assert_eq!(Schedule::fixed("A").roam(7), Some("A"));
        assert_eq!(Schedule::new(vec![]).roam(1), None);
    }
}
