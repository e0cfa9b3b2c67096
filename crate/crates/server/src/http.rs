//! HTTP/JSON surface. Bodies are the same JSON messages as the TCP node
//! API; the `type` tag is optional on requests because the route already
//! names the operation.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use discedge_core::protocol::{
    CompletionRequest, EngineCompletionRequest, ErrorCode, Request, Response, SessionRef,
};

use crate::LiveNode;

type Node = State<Arc<LiveNode>>;
type Reply = (StatusCode, Json<Response>);

#[derive(Deserialize)]
struct TokenizeBody {
    model: String,
    text: String,
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::InvalidRequest => StatusCode::BAD_REQUEST,
        ErrorCode::ModelNotServed | ErrorCode::NoKeygroup => StatusCode::NOT_FOUND,
        ErrorCode::ModeMismatch | ErrorCode::TurnConflict => StatusCode::CONFLICT,
        ErrorCode::StaleContext => StatusCode::SERVICE_UNAVAILABLE,
        ErrorCode::Transport => StatusCode::BAD_GATEWAY,
        ErrorCode::CorruptContext | ErrorCode::Engine => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn dispatch(node: &LiveNode, req: Request) -> Reply {
    let resp = node.handle(req).await;
    let status = match &resp {
        Response::Error { code, .. } => status_for(*code),
        _ => StatusCode::OK,
    };
    (status, Json(resp))
}

async fn completion(State(node): Node, Json(req): Json<CompletionRequest>) -> Reply {
    dispatch(&node, Request::Completion(req)).await
}

async fn engine_completion(State(node): Node, Json(req): Json<EngineCompletionRequest>) -> Reply {
    dispatch(&node, Request::EngineCompletion(req)).await
}

async fn tokenize(State(node): Node, Json(body): Json<TokenizeBody>) -> Reply {
    dispatch(&node, Request::Tokenize { model_id: body.model, text: body.text }).await
}

async fn delete_session(State(node): Node, Path((model, user, session)): Path<(String, String, String)>) -> Reply {
    let r = SessionRef { model_id: model, user_id: user, session_id: session };
    dispatch(&node, Request::DeleteSession(r)).await
}

async fn health(State(node): Node) -> Reply {
    dispatch(&node, Request::Health).await
}

async fn stats(State(node): Node) -> Reply {
    dispatch(&node, Request::Stats).await
}

async fn reset(State(node): Node) -> Reply {
    dispatch(&node, Request::Reset).await
}

pub fn router(node: Arc<LiveNode>) -> Router {
    Router::new()
        .route("/v1/completion", post(completion))
        .route("/v1/sessions/{model}/{user}/{session}", delete(delete_session))
        .route("/completion", post(engine_completion))
        .route("/tokenize", post(tokenize))
        .route("/health", get(health))
        .route("/stats", get(stats))
        .route("/reset", post(reset))
        .with_state(node)
}
