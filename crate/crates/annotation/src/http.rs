//! JSON over HTTP for the annotation UI.
//!
//! | method | path | who |
//! |---|---|---|
//! | POST | `/annotators` | annotators |
//! | GET | `/next?annotator=<id>` | annotators |
//! | POST | `/votes` | annotators |
//! | POST | `/batches` | admin |
//! | GET | `/export?batch=<id>&format=csv\|jsonl` | admin |
//!
//! Admin routes require the `x-admin-token` header when a token is configured.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::AnnotationError;
use crate::model::{AnnotationItem, Choice, Demographics, PairSource};
use crate::store::{ExportFormat, NextItem, Progress, Store};

pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub admin_token: Option<String>,
    pub default_assignments: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/annotators", post(register))
        .route("/next", get(next))
        .route("/votes", post(vote))
        .route("/batches", post(create_batch))
        .route("/export", get(export))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub struct ApiError(AnnotationError);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use AnnotationError as E;
        let (status, code) = match &self.0 {
            E::EmptyBatch => (StatusCode::BAD_REQUEST, "empty_batch"),
            E::ZeroAssignments => (StatusCode::BAD_REQUEST, "zero_assignments"),
            E::DuplicateSample(_) => (StatusCode::BAD_REQUEST, "duplicate_sample"),
            E::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            E::NotEnoughAnnotators { .. } => (StatusCode::CONFLICT, "not_enough_annotators"),
            E::DuplicateAnnotator(_) => (StatusCode::CONFLICT, "duplicate_annotator"),
            E::DuplicateVote { .. } => (StatusCode::CONFLICT, "duplicate_vote"),
            E::NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
            E::UnknownAnnotator(_) => (StatusCode::NOT_FOUND, "unknown_annotator"),
            E::UnknownBatch(_) => (StatusCode::NOT_FOUND, "unknown_batch"),
            E::CorruptLog { .. } | E::Json(_) | E::Csv(_) | E::Io(_) => {
                tracing::error!(error = %self.0, "annotation store failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        (status, Json(serde_json::json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

fn unauthorized() -> Response {
    (StatusCode::UNAUTHORIZED, Json(serde_json::json!({ "error": "unauthorized", "message": "admin token required" }))).into_response()
}

fn is_admin(state: &AppState, headers: &HeaderMap) -> bool {
    match &state.admin_token {
        None => true,
        Some(token) => headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok()) == Some(token.as_str()),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct RegisterRequest {
    #[serde(default)]
    pub annotator_id: Option<String>,
    #[serde(default)]
    pub demographics: Option<Demographics>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub annotator_id: String,
}

async fn register(State(state): State<AppState>, body: Option<Json<RegisterRequest>>) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let profile = state.store.register_annotator(req.annotator_id, req.demographics)?;
    Ok((
        StatusCode::CREATED,
        Json(RegisterResponse {
            annotator_id: profile.annotator_id,
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

/// Body of `GET /next`: `status` is `"item"` or `"done"`.
#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<AnnotationItem>,
    pub progress: Progress,
}

async fn next(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Result<Json<NextResponse>, ApiError> {
    Ok(Json(match state.store.serve_next(&q.annotator)? {
        NextItem::Item(item, progress) => NextResponse {
            status: "item".into(),
            item: Some(item),
            progress,
        },
        NextItem::Done(progress) => NextResponse {
            status: "done".into(),
            item: None,
            progress,
        },
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteRequest {
    pub annotator_id: String,
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    pub choice: Choice,
}

/// Acknowledgment only; the resolved model is not echoed back.
#[derive(Debug, Serialize, Deserialize)]
pub struct VoteAck {
    pub recorded: bool,
    pub batch_id: String,
    pub sample_id: String,
}

async fn vote(State(state): State<AppState>, Json(req): Json<VoteRequest>) -> Result<impl IntoResponse, ApiError> {
    let v = state.store.submit_vote(&req.annotator_id, req.batch_id.as_deref(), &req.sample_id, req.choice)?;
    Ok((
        StatusCode::CREATED,
        Json(VoteAck {
            recorded: true,
            batch_id: v.batch_id,
            sample_id: v.sample_id,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchRequest {
    pub model_a: String,
    pub model_b: String,
    pub items: Vec<PairSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments_per_item: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchResponse {
    pub batch_id: String,
    pub items: usize,
    pub scheduled: usize,
}

async fn create_batch(State(state): State<AppState>, headers: HeaderMap, Json(req): Json<BatchRequest>) -> Result<Response, ApiError> {
    if !is_admin(&state, &headers) {
        return Ok(unauthorized());
    }
    let per_item = req.assignments_per_item.unwrap_or(state.default_assignments);
    let batch = state.store.create_batch(&req.model_a, &req.model_b, req.items, per_item)?;
    Ok((
        StatusCode::CREATED,
        Json(BatchResponse {
            batch_id: batch.batch_id,
            items: batch.items.len(),
            scheduled: batch.assignments.len(),
        }),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    pub batch: String,
    #[serde(default)]
    pub format: Option<ExportFormat>,
}

async fn export(State(state): State<AppState>, headers: HeaderMap, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    if !is_admin(&state, &headers) {
        return Ok(unauthorized());
    }
    let format = q.format.unwrap_or(ExportFormat::Csv);
    let body = state.store.export(&q.batch, format)?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Jsonl => "application/x-ndjson",
    };
    Ok(([(CONTENT_TYPE, content_type)], body).into_response())
}
