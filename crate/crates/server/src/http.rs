//! HTTP routes used by the web chat front end.

use std::net::SocketAddr;
use std::path::Component;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::orchestrator::{Orchestrator, OrchestratorError, UserMessage};
use crate::rpc;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self.0 {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::BAD_REQUEST => "bad_request",
            StatusCode::FORBIDDEN => "forbidden",
            _ => "internal",
        };
        (self.0, Json(json!({ "code": code, "message": self.1 }))).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            OrchestratorError::UnknownSession(_) => StatusCode::NOT_FOUND,
            OrchestratorError::UnknownUser(_) | OrchestratorError::EmptyMessage | OrchestratorError::BadImage(..) => {
                StatusCode::BAD_REQUEST
            }
            OrchestratorError::AnonymousNotAllowed => StatusCode::FORBIDDEN,
            OrchestratorError::Io { .. } | OrchestratorError::CorruptLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize, Default)]
struct NewSession {
    user_id: Option<String>,
}

pub fn router(orch: Arc<Orchestrator>) -> Router {
    Router::new()
        .route("/rpc", post(rpc_endpoint))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/message", post(post_message))
        .route("/users", get(list_users))
        .route("/files/{*path}", get(get_file))
        .with_state(orch)
}

async fn rpc_endpoint(State(orch): State<Arc<Orchestrator>>, body: String) -> Response {
    let out = tokio::task::spawn_blocking(move || rpc::handle(orch.registry(), &body))
        .await
        .unwrap_or_else(|e| json!({"jsonrpc": "2.0", "id": null, "error": {"code": rpc::INTERNAL_ERROR, "message": e.to_string()}}));
    if out.is_null() {
        StatusCode::NO_CONTENT.into_response()
    } else {
        Json(out).into_response()
    }
}

async fn create_session(State(orch): State<Arc<Orchestrator>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: NewSession = if body.iter().all(u8::is_ascii_whitespace) {
        NewSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let s = blocking(move || Ok(orch.create_session(req.user_id.as_deref())?)).await?;
    Ok(Json(json!(s)))
}

async fn get_session(State(orch): State<Arc<Orchestrator>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = blocking(move || Ok(orch.session(&id)?)).await?;
    Ok(Json(json!(s)))
}

async fn post_message(
    State(orch): State<Arc<Orchestrator>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let msg: UserMessage =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let turn = blocking(move || Ok(orch.handle_message(&id, msg)?)).await?;
    Ok(Json(json!(turn)))
}

async fn list_users(State(orch): State<Arc<Orchestrator>>) -> Json<Value> {
    let users: Vec<Value> = orch
        .catalog()
        .users()
        .iter()
        .map(|u| json!({ "id": u.id, "n_outfits": u.outfit_ids.len() }))
        .collect();
    Json(Value::Array(users))
}

async fn get_file(State(orch): State<Arc<Orchestrator>>, Path(path): Path<String>) -> ApiResult<Response> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no file {path}"));
    if !std::path::Path::new(&path).components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(not_found());
    }
    let resolved = orch.context().resolve_ref(&path).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&resolved).await.map_err(|_| not_found())?;
    let mime = match resolved.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(orch: Arc<Orchestrator>, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(orch, tokio::net::TcpListener::bind(addr).await?).await
}

/// Serves on an already bound listener, e.g. one bound to port 0.
pub async fn serve_on(orch: Arc<Orchestrator>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(orch)).await
}
