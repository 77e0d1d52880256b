//! HTTP control API over a live world.
//!
//! Handlers lock the world, apply the request at the current virtual
//! instant, process whatever became due, and answer from the resulting
//! state, so a client always reads its own writes.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use fediot_core::core5g::{DomainId, Imsi, SessionId};
use fediot_core::gateway::{AccessRequest, AuthorizationPolicy, GatewayError};
use fediot_core::scenario::{World, WorldError};
use fediot_core::sdn::{PolicyDocument, PolicyMutation, SdnError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub type SharedWorld = Arc<Mutex<World>>;

/// Header naming the operator behind a mutating request.
pub const ACTOR_HEADER: &str = "x-actor";
const DEFAULT_ACTOR: &str = "api";
const MAX_WAIT_MS: u64 = 30_000;
const POLL_STEP_MS: u64 = 20;

/// Error body `{code, message}` with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<SdnError> for ApiError {
    fn from(e: SdnError) -> Self {
        let msg = e.to_string();
        match e {
            SdnError::Policy(_) => ApiError::new(StatusCode::BAD_REQUEST, "malformed_policy", msg),
            SdnError::UnknownRule(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_rule", msg),
            SdnError::UnknownDomain(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_domain", msg),
            SdnError::DomainUnreachable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "domain_unreachable", msg),
        }
    }
}

impl From<WorldError> for ApiError {
    fn from(e: WorldError) -> Self {
        let msg = e.to_string();
        match e {
            WorldError::UnknownImsi(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_imsi", msg),
            WorldError::UnknownDomain(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_domain", msg),
            WorldError::NotAwaitingApproval(_) => ApiError::new(StatusCode::NOT_FOUND, "not_awaiting_approval", msg),
            WorldError::NoActiveSession(_) => ApiError::new(StatusCode::CONFLICT, "no_active_session", msg),
            WorldError::SameDomain(..) => ApiError::new(StatusCode::CONFLICT, "same_domain", msg),
            WorldError::Sdn(e) => e.into(),
            WorldError::Gateway(GatewayError::NotAwaitingApproval(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_awaiting_approval", msg)
            }
            WorldError::Gateway(GatewayError::MalformedPolicy { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, "malformed_policy", msg)
            }
            WorldError::Gateway(_) => ApiError::new(StatusCode::CONFLICT, "gateway_refused", msg),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lock(world: &SharedWorld) -> MutexGuard<'_, World> {
    world.lock().unwrap_or_else(|p| p.into_inner())
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get(ACTOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.trim().is_empty())
        .unwrap_or(DEFAULT_ACTOR)
        .to_string()
}

/// Parses a JSON body ourselves so malformed input gets the `{code,
/// message}` shape instead of axum's plain-text rejection.
fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

pub fn router(world: SharedWorld) -> Router {
    Router::new()
        .route("/api/v1/sessions", get(sessions))
        .route("/api/v1/policies", get(get_policies).put(put_policies))
        .route("/api/v1/policies/rules", post(add_rule))
        .route("/api/v1/policies/rules/:id", delete(remove_rule))
        .route("/api/v1/onboarding", get(onboarding))
        .route("/api/v1/onboarding/:session_id/:verdict", post(resolve_onboarding))
        .route("/api/v1/actions/roam", post(roam))
        .route("/api/v1/events", get(events))
        .route("/api/v1/decisions", post(decide))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(world)
}

async fn sessions(State(w): State<SharedWorld>) -> impl IntoResponse {
    Json(lock(&w).sessions())
}

async fn get_policies(State(w): State<SharedWorld>) -> impl IntoResponse {
    Json((*lock(&w).policies()).clone())
}

#[derive(Debug, Deserialize)]
pub struct BaseVersion {
    pub base_version: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VersionBody {
    pub version: u64,
}

fn mutate(world: &mut World, mutation: PolicyMutation, actor: &str, base: Option<u64>) -> ApiResult<VersionBody> {
    let version = world.mutate_policies(mutation, actor, base)?;
    world.settle();
    Ok(Json(VersionBody { version }))
}

async fn put_policies(
    State(w): State<SharedWorld>,
    Query(q): Query<BaseVersion>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<VersionBody> {
    let doc: PolicyDocument = parse(&body)?;
    mutate(&mut lock(&w), PolicyMutation::Replace(doc), &actor(&headers), q.base_version)
}

async fn add_rule(
    State(w): State<SharedWorld>,
    Query(q): Query<BaseVersion>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<VersionBody> {
    let rule: AuthorizationPolicy = parse(&body)?;
    let mut world = lock(&w);
    if world.policies().rule(&rule.rule_id).is_some() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "duplicate_rule",
            format!("rule {} already exists", rule.rule_id),
        ));
    }
    mutate(&mut world, PolicyMutation::AddRule { rule }, &actor(&headers), q.base_version)
}

async fn remove_rule(
    State(w): State<SharedWorld>,
    Path(rule_id): Path<String>,
    Query(q): Query<BaseVersion>,
    headers: HeaderMap,
) -> ApiResult<VersionBody> {
    mutate(&mut lock(&w), PolicyMutation::RemoveRule { rule_id }, &actor(&headers), q.base_version)
}

async fn onboarding(State(w): State<SharedWorld>) -> impl IntoResponse {
    Json(lock(&w).pending_onboarding())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OnboardingOutcome {
    pub session_id: SessionId,
    pub admitted: bool,
}

async fn resolve_onboarding(
    State(w): State<SharedWorld>,
    Path((session_id, verdict)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<OnboardingOutcome> {
    let session_id: SessionId = session_id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("invalid session id {session_id:?}")))?;
    let approve = match verdict.as_str() {
        "approve" => true,
        "deny" => false,
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")),
    };
    let mut world = lock(&w);
    let admitted = world.resolve_onboarding(session_id, approve, &actor(&headers))?;
    world.settle();
    Ok(Json(OnboardingOutcome { session_id, admitted }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoamBody {
    pub imsi: String,
    pub to_domain: String,
}

async fn roam(State(w): State<SharedWorld>, body: String) -> ApiResult<Value> {
    let req: RoamBody = parse(&body)?;
    let imsi = Imsi::parse(&req.imsi).map_err(ApiError::bad_request)?;
    let to = DomainId::new(req.to_domain);
    let mut world = lock(&w);
    world.roam(&imsi, &to)?;
    Ok(Json(json!({ "imsi": imsi, "to_domain": to, "accepted_at": world.now() })))
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub since: usize,
    /// Long-poll: wait up to this long for a record past `since`.
    #[serde(default)]
    pub wait_ms: u64,
}

async fn events(State(w): State<SharedWorld>, Query(q): Query<EventsQuery>) -> impl IntoResponse {
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
    loop {
        {
            let world = lock(&w);
            let log = world.log();
            if log.len() > q.since || tokio::time::Instant::now() >= deadline {
                return Json(json!({ "next": log.len(), "events": log.since(q.since) }));
            }
        }
        tokio::time::sleep(Duration::from_millis(POLL_STEP_MS)).await;
    }
}

async fn decide(State(w): State<SharedWorld>, body: String) -> ApiResult<Value> {
    let req: AccessRequest = parse(&body)?;
    let decision = lock(&w).decide(&req.domain, &req)?;
    Ok(Json(serde_json::to_value(decision).expect("decisions serialize")))
}
