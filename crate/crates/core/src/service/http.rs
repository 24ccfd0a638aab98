//! JSON-over-HTTP API. Every route lives under `/api`; routes tagged admin
//! require the shared token in `x-admin-token` (or `Authorization: Bearer`).

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::escalation::{EscalationError, EscalationId, EscalationStatus};
use crate::pipeline::{PipelineError, Turn};
use crate::students::ClusterError;

use super::engine::{Engine, EngineError};

pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(details) = self.details {
            body["details"] = details;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        use StatusCode as S;
        let message = err.to_string();
        let (status, code) = match &err {
            EngineError::Pipeline(PipelineError::UnknownSession(_)) => {
                (S::NOT_FOUND, "unknown_session")
            }
            EngineError::Pipeline(PipelineError::EmptyStudentId) => {
                (S::BAD_REQUEST, "invalid_student_id")
            }
            EngineError::Pipeline(PipelineError::StaleModel { .. }) => (S::CONFLICT, "stale_model"),
            EngineError::Escalation(EscalationError::NotFound(_)) => {
                (S::NOT_FOUND, "escalation_not_found")
            }
            EngineError::Escalation(EscalationError::AlreadyResolved(_)) => {
                (S::CONFLICT, "already_resolved")
            }
            EngineError::Escalation(EscalationError::UnknownIntent(_)) => {
                (S::UNPROCESSABLE_ENTITY, "unknown_intent")
            }
            EngineError::Escalation(EscalationError::EmptyAnswer) => {
                (S::BAD_REQUEST, "empty_answer")
            }
            EngineError::Nlu(crate::nlu::NluError::EmptyWorkspace) => {
                (S::UNPROCESSABLE_ENTITY, "empty_workspace")
            }
            EngineError::InvalidWorkspace(_) => (S::UNPROCESSABLE_ENTITY, "invalid_workspace"),
            EngineError::Kb(_) => (S::UNPROCESSABLE_ENTITY, "malformed_kb"),
            EngineError::Cluster(ClusterError::InvalidK) => (S::BAD_REQUEST, "invalid_k"),
            EngineError::Cluster(_) => (S::UNPROCESSABLE_ENTITY, "too_few_distinct_points"),
            EngineError::Unsupported(_) => (S::NOT_IMPLEMENTED, "unsupported"),
            _ => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        let details = match err {
            EngineError::InvalidWorkspace(violations) => Some(json!(violations
                .iter()
                .map(|v| json!({ "violation": v, "message": v.to_string() }))
                .collect::<Vec<_>>())),
            _ => None,
        };
        if status == S::INTERNAL_SERVER_ERROR {
            tracing::error!("{message}");
        }
        Self {
            status,
            code,
            message,
            details,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_body",
            rejection.body_text(),
        )
    }
}

impl From<QueryRejection> for ApiError {
    fn from(rejection: QueryRejection) -> Self {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_query",
            rejection.body_text(),
        )
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn require_admin(engine: &Engine, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(expected) = engine.config().admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "admin_disabled",
            "no admin token is configured on this server",
        ));
    };
    let presented = headers
        .get(ADMIN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(axum::http::header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    if presented == Some(expected) {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong admin token",
        ))
    }
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    student_id: String,
}

#[derive(Debug, Serialize)]
struct SessionCreated {
    session_id: String,
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    text: String,
}

/// Body of a message reply; `answer` is absent while the turn waits for a TA.
#[derive(Debug, Clone, Serialize)]
pub struct MessageReply {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub pending: bool,
    pub intent: String,
    pub confidence: f64,
    pub escalated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escalation_id: Option<EscalationId>,
}

impl From<&Turn> for MessageReply {
    fn from(turn: &Turn) -> Self {
        Self {
            answer: turn.answer.text().map(str::to_string),
            pending: turn.answer.is_pending(),
            intent: turn
                .classification
                .top_intent()
                .unwrap_or_default()
                .to_string(),
            confidence: turn.confidence,
            escalated: turn.escalated,
            escalation_id: turn.escalation_id,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EscalationFilter {
    status: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Resolve {
    final_answer: String,
    corrected_intent: String,
}

#[derive(Debug, Deserialize)]
struct ClusterQuery {
    k: Option<usize>,
    seed: Option<u64>,
}

async fn create_session(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<SessionCreated> {
    let Json(body) = body?;
    let session_id = engine.create_session(&body.student_id)?;
    Ok(Json(SessionCreated { session_id }))
}

async fn post_message(
    State(engine): State<Arc<Engine>>,
    Path(session_id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> ApiResult<MessageReply> {
    let Json(body) = body?;
    let turn = engine.post_message(&session_id, &body.text)?;
    Ok(Json(MessageReply::from(&turn)))
}

async fn list_turns(
    State(engine): State<Arc<Engine>>,
    Path(session_id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(engine.turns(&session_id)?).into_response())
}

async fn list_escalations(
    State(engine): State<Arc<Engine>>,
    headers: HeaderMap,
    query: Result<Query<EscalationFilter>, QueryRejection>,
) -> Result<Response, ApiError> {
    require_admin(&engine, &headers)?;
    let Query(filter) = query?;
    let status = match filter.status.as_deref() {
        None | Some("pending") => Some(EscalationStatus::Pending),
        Some("resolved") => Some(EscalationStatus::Resolved),
        Some("all") => None,
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "malformed_query",
                format!("status must be pending, resolved or all, not `{other}`"),
            ))
        }
    };
    Ok(Json(engine.escalations(status)).into_response())
}

async fn resolve(
    State(engine): State<Arc<Engine>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<Resolve>, JsonRejection>,
) -> Result<Response, ApiError> {
    require_admin(&engine, &headers)?;
    let id: EscalationId = id.parse().map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "escalation_not_found",
            format!("no escalation `{id}`"),
        )
    })?;
    let Json(body) = body?;
    Ok(Json(engine.resolve(id, &body.final_answer, &body.corrected_intent)?).into_response())
}

async fn retrain(
    State(engine): State<Arc<Engine>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    require_admin(&engine, &headers)?;
    let engine = engine.clone();
    let report = tokio::task::spawn_blocking(move || engine.retrain())
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok(Json(report).into_response())
}

async fn reload_kb(
    State(engine): State<Arc<Engine>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    require_admin(&engine, &headers)?;
    let paths = engine.reload_kb()?;
    Ok(Json(json!({ "paths": paths })).into_response())
}

async fn clusters(
    State(engine): State<Arc<Engine>>,
    headers: HeaderMap,
    query: Result<Query<ClusterQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    require_admin(&engine, &headers)?;
    let Query(q) = query?;
    Ok(Json(engine.clusters(q.k, q.seed)?).into_response())
}

async fn health(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.health()).into_response()
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/turns", get(list_turns))
        .route("/api/escalations", get(list_escalations))
        .route("/api/escalations/{id}/resolve", post(resolve))
        .route("/api/admin/retrain", post(retrain))
        .route("/api/admin/reload-kb", post(reload_kb))
        .route("/api/students/clusters", get(clusters))
        .route("/api/health", get(health))
        .fallback(not_found)
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed",
            )
        })
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>) -> std::io::Result<()> {
    let addr = format!("{}:{}", engine.config().host, engine.config().port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
