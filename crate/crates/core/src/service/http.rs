use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tracing::{error, info};

use crate::error::{Error, Result};
use crate::l1::DEFAULT_K;
use crate::service::{SearchRequest, SearchService};

static ERROR_SEQ: AtomicU64 = AtomicU64::new(1);

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg.into() }))).into_response()
}

/// Logs the detail and returns only an id the operator can grep for.
fn internal_error(err: &dyn std::fmt::Display) -> Response {
    let id = format!("e{:08x}", ERROR_SEQ.fetch_add(1, Ordering::Relaxed));
    error!(error_id = %id, error = %err, "search failed");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(json!({ "error": "internal error", "id": id })),
    )
        .into_response()
}

fn flag(params: &HashMap<String, String>, name: &str) -> std::result::Result<bool, String> {
    match params.get(name).map(String::as_str) {
        None | Some("0" | "false" | "") => Ok(false),
        Some("1" | "true") => Ok(true),
        Some(v) => Err(format!("`{name}` must be 0 or 1, got `{v}`")),
    }
}

fn parse_request(params: &HashMap<String, String>) -> std::result::Result<SearchRequest, String> {
    let query = params.get("q").ok_or("missing query parameter `q`")?.clone();
    let k = match params.get("k") {
        None => DEFAULT_K,
        Some(v) => v.parse().map_err(|_| format!("`k` must be an integer, got `{v}`"))?,
    };
    let req = SearchRequest {
        query,
        k,
        fusion: flag(params, "fusion")?,
        answers: flag(params, "answers")?,
        no_cache: flag(params, "no_cache")?,
    };
    req.validate().map_err(|e| e.to_string())?;
    Ok(req)
}

async fn search(State(svc): State<Arc<SearchService>>, Query(params): Query<HashMap<String, String>>) -> Response {
    let req = match parse_request(&params) {
        Ok(r) => r,
        Err(msg) => return bad_request(msg),
    };
    match tokio::task::spawn_blocking(move || svc.handle_search(&req)).await {
        Ok(Ok(result)) => Json(result).into_response(),
        Ok(Err(Error::InvalidArgument(msg))) => bad_request(msg),
        Ok(Err(e)) => internal_error(&e),
        Err(e) => internal_error(&e),
    }
}

async fn health(State(svc): State<Arc<SearchService>>) -> Response {
    Json(svc.health()).into_response()
}

/// `GET /search` and `GET /health`. Responses allow any origin so a static
/// frontend on another port can call them.
pub fn router(svc: Arc<SearchService>) -> Router {
    Router::new()
        .route("/search", get(search))
        .route("/health", get(health))
        .with_state(svc)
        .layer(axum::middleware::map_response(|mut resp: Response| async move {
            resp.headers_mut()
                .insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
            resp
        }))
}

/// Serves until the process is stopped.
pub async fn serve(svc: Arc<SearchService>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Network(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Network(e.to_string()))?;
    info!(%local, "listening");
    axum::serve(listener, router(svc))
        .await
        .map_err(|e| Error::Network(format!("server error: {e}")))
}
