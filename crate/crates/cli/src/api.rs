//! HTTP API. State is loaded once and read-only while serving; the agent
//! pipeline is blocking and runs on tokio's blocking pool.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bess_agents::embed::Embedder;
use bess_agents::knowledge::{retrieve_topk, KnowledgeIndex, DEFAULT_TOP_K};
use bess_agents::{FinalAnswer, Orchestrator, StageError};
use bess_core::records::{RecordEntry, RecordStore};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

pub struct AppState {
    pub orchestrator: Orchestrator,
    pub store: Arc<RecordStore>,
    pub index: Arc<KnowledgeIndex>,
    pub embedder: Arc<dyn Embedder>,
    pub llm_label: String,
    pub timeout: Duration,
    audit_log: Option<Mutex<File>>,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator, store: Arc<RecordStore>, timeout: Duration) -> Self {
        Self {
            llm_label: orchestrator.llm.describe(),
            index: orchestrator.index.clone(),
            embedder: orchestrator.embedder.clone(),
            orchestrator,
            store,
            timeout,
            audit_log: None,
        }
    }

    pub fn with_audit_log(mut self, path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit_log = Some(Mutex::new(f));
        Ok(self)
    }

    fn append_audit(&self, answer: &FinalAnswer) {
        let Some(log) = &self.audit_log else { return };
        let line = json!({"at": chrono::Utc::now().to_rfc3339(), "answer": answer});
        let mut f = log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!("audit log write failed: {e}");
        }
    }
}

/// Structured error body: `{error, stage}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    stage: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, stage: &str, message: impl ToString) -> Self {
        Self {
            status,
            stage: stage.into(),
            message: message.to_string(),
        }
    }

    fn bad_request(stage: &str, message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, stage, message)
    }
}

impl From<StageError> for ApiError {
    fn from(e: StageError) -> Self {
        Self::bad_request(&e.stage, e.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "stage": self.stage}))).into_response()
    }
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let mut app = Router::new()
        .route("/api/query", post(query))
        .route("/api/records", get(records))
        .route("/api/knowledge/search", get(search))
        .route("/api/healthz", get(healthz))
        .with_state(state);
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origins)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    app
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub question: String,
}

/// The full answer plus request wall time in ms.
#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    #[serde(flatten)]
    pub answer: FinalAnswer,
    pub timings_ms: bess_agents::Timings,
}

async fn query(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request("request", e.body_text()))?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("request", "question is empty"));
    }
    let t0 = Instant::now();
    let s = state.clone();
    let job = tokio::task::spawn_blocking(move || s.orchestrator.answer(&req.question));
    let answer = tokio::time::timeout(state.timeout, job)
        .await
        .map_err(|_| ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "query exceeded the time budget"))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))??;
    state.append_audit(&answer);
    let mut timings = answer.audit.timings_ms.clone();
    timings.insert("request".into(), t0.elapsed().as_secs_f64() * 1e3);
    Ok(Json(QueryResponse {
        answer,
        timings_ms: timings,
    }))
}

#[derive(Debug, Deserialize)]
struct RangeParams {
    from: Option<String>,
    to: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordsResponse {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub packs: usize,
    pub entries: Vec<RecordEntry>,
}

fn parse_date(field: &str, v: Option<&str>) -> Result<Option<NaiveDate>, ApiError> {
    v.map(|s| {
        s.parse()
            .map_err(|_| ApiError::bad_request("records", format!("{field}: {s:?} is not a YYYY-MM-DD date")))
    })
    .transpose()
}

async fn records(
    State(state): State<Arc<AppState>>,
    params: Result<Query<RangeParams>, QueryRejection>,
) -> Result<Json<RecordsResponse>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request("records", e.body_text()))?;
    let from = parse_date("from", p.from.as_deref())?.or(state.store.first_date());
    let to = parse_date("to", p.to.as_deref())?.or(state.store.last_date());
    let entries = match (from, to) {
        (Some(f), Some(t)) => state
            .store
            .query_range(f, t)
            .map_err(|e| ApiError::bad_request("records", e))?
            .into_iter()
            .cloned()
            .collect(),
        _ => Vec::new(),
    };
    Ok(Json(RecordsResponse {
        from,
        to,
        packs: state.store.packs(),
        entries,
    }))
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: String,
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchHit {
    pub slice_id: String,
    pub fused_score: f64,
    pub best_query_index: usize,
    pub key: String,
    pub body: String,
    pub source: String,
}

async fn search(
    State(state): State<Arc<AppState>>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request("knowledge.search", e.body_text()))?;
    if p.q.trim().is_empty() {
        return Err(ApiError::bad_request("knowledge.search", "q is empty"));
    }
    let k = p.k.unwrap_or(DEFAULT_TOP_K);
    let s = state.clone();
    let q = p.q.clone();
    let hits = tokio::task::spawn_blocking(move || retrieve_topk(&[q], &s.index, &*s.embedder, k))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map_err(|e| ApiError::bad_request("knowledge.search", e))?;
    let hits: Vec<SearchHit> = hits
        .into_iter()
        .filter_map(|h| {
            let slice = state.index.get(&h.slice_id)?;
            Some(SearchHit {
                key: slice.key.clone(),
                body: slice.body.clone(),
                source: slice.source.clone(),
                slice_id: h.slice_id,
                fused_score: h.fused_score,
                best_query_index: h.best_query_index,
            })
        })
        .collect();
    Ok(Json(json!({"query": p.q, "k": k, "hits": hits})))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let store = &state.store;
    let index = &state.index;
    let status = if store.is_empty() || index.is_empty() { "degraded" } else { "ok" };
    Json(json!({
        "status": status,
        "store": {
            "entries": store.len(),
            "packs": store.packs(),
            "first_date": store.first_date(),
            "last_date": store.last_date(),
        },
        "index": {
            "slices": index.len(),
            "dim": index.dim,
            "fingerprint": index.fingerprint,
        },
        "provider": {
            "llm": state.llm_label,
            "embedder": state.embedder.fingerprint(),
        },
    }))
}
