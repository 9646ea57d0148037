//! JSON routes over a live [`Device`].
//!
//! Errors are `{"error": <message>, "code": <snake_case>}` with a matching
//! status. Runtime prompts stream from `GET /prompts` as server-sent events
//! named `issued`, `answered` and `expired`.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use policy_manager::engine::{
    AppSettings, Decision, EngineError, GlobalSettings, InstallPlan, Notification, PermissionRequest, PromptEvent,
    PromptId, PromptTicket, Recommendation, Remember, RequestKind, Resolution,
};
use policy_manager::generator::{AppDescriptor, PolicyRepository};
use policy_manager::sim::{
    run_interactive, run_scenario, AppGroups, Device, RunMode, RunReport, Scenario, ScenarioError, UsageSummary, Window,
};
use policy_manager::store::{
    InstalledApp, NewUserPolicy, OrgProfile, QuickSettings, Sensor, SensorState, StoreError, UserPolicy, Verdict,
};
use policy_manager::AppPolicy;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Header carrying the shared secret for removing an org profile.
pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    pub device: Arc<Device>,
    pub repository: Option<Arc<dyn PolicyRepository>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/apps", get(list_apps).post(install_app))
        .route("/apps/{id}/policy", get(app_policy))
        .route("/apps/{id}/settings", get(app_settings))
        .route("/apps/{id}/session", post(session_start))
        .route("/policies", put(record_policy))
        .route("/global/{permission}", get(global_settings))
        .route("/quick-settings", get(quick_settings).put(set_quick_setting))
        .route("/org-profile", get(active_profile).post(install_profile))
        .route("/org-profile/{id}", delete(remove_profile))
        .route("/notifications", get(notifications))
        .route("/notifications/{id}/dismiss", post(dismiss_notification))
        .route("/prompts", get(prompt_stream))
        .route("/prompts/outstanding", get(outstanding_prompts))
        .route("/prompts/{id}/answer", post(answer_prompt))
        .route("/requests", post(submit_request))
        .route("/decisions", get(decisions))
        .route("/summary", get(summary))
        .route("/app-groups", get(app_groups))
        .route("/recommendations", get(recommendations))
        .route("/scenario/run", post(run_scenario_route))
        .with_state(state)
}

// ---- errors ----

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.to_string(), "code": code }),
        }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.body[key] = serde_json::to_value(value).unwrap_or(Value::Null);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            StoreError::UnknownApp(_) => (S::NOT_FOUND, "unknown_app"),
            StoreError::AppAlreadyInstalled(_) => (S::CONFLICT, "already_installed"),
            StoreError::UnknownPermission(_) => (S::BAD_REQUEST, "unknown_permission"),
            StoreError::Validation(_) => (S::UNPROCESSABLE_ENTITY, "invalid_profile"),
            StoreError::ProfileAlreadyActive(_) => (S::CONFLICT, "profile_active"),
            StoreError::ProfileNotFound(_) => (S::NOT_FOUND, "unknown_profile"),
            StoreError::Refused => (S::FORBIDDEN, "refused"),
            StoreError::Locked { .. } => (S::CONFLICT, "locked"),
            StoreError::CorruptLog { .. } | StoreError::Io(_) | StoreError::Json(_) => {
                tracing::error!(error = %e, "store failure");
                (S::INTERNAL_SERVER_ERROR, "store_failure")
            }
        };
        let err = ApiError::new(status, code, &e);
        match e {
            StoreError::Locked { sensor, mandated } => err.with("sensor", sensor).with("mandated", mandated),
            _ => err,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        match e {
            EngineError::Store(e) => e.into(),
            EngineError::UnknownApp(_) => ApiError::new(S::NOT_FOUND, "unknown_app", e),
            EngineError::UnknownPermission(_) => ApiError::new(S::BAD_REQUEST, "unknown_permission", e),
            EngineError::UnknownPurpose(_) => ApiError::new(S::BAD_REQUEST, "unknown_purpose", e),
            EngineError::UnknownPrompt(_) => ApiError::new(S::NOT_FOUND, "unknown_prompt", e),
            EngineError::AlreadyAnswered { .. } => ApiError::new(S::CONFLICT, "already_answered", e),
            EngineError::Expired { ref decision, .. } => {
                let decision = decision.clone();
                ApiError::new(S::GONE, "expired", &e).with("decision", decision)
            }
            EngineError::Parse(_) => ApiError::new(S::UNPROCESSABLE_ENTITY, "invalid_policy", e),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        if e.is_busy() {
            return ApiError::new(StatusCode::CONFLICT, "scenario_running", e);
        }
        let index = e.index;
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario", e).with("index", index)
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))
    }
}

fn bad_request(message: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
}

// ---- apps ----

async fn list_apps(State(s): State<AppState>) -> Json<Vec<InstalledApp>> {
    Json(s.device.store().state().apps.values().cloned().collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstallBody {
    descriptor: AppDescriptor,
    /// Policy document shipped in the app package.
    #[serde(default)]
    policy: Option<Value>,
    /// Plan only; nothing is recorded.
    #[serde(default)]
    dry_run: bool,
}

async fn install_app(
    State(s): State<AppState>,
    Body(body): Body<InstallBody>,
) -> ApiResult<(StatusCode, Json<InstallPlan>)> {
    let embedded = body
        .policy
        .as_ref()
        .map(|v| serde_json::to_vec(v).expect("JSON value serializes"));
    if body.dry_run {
        let plan = s
            .device
            .engine()
            .plan_install(&body.descriptor, embedded.as_deref(), s.repository.as_deref())?;
        return Ok((StatusCode::OK, Json(plan)));
    }
    let plan = s.device.install(&body.descriptor, embedded.as_deref())?;
    Ok((StatusCode::CREATED, Json(plan)))
}

async fn app_policy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AppPolicy>> {
    let state = s.device.store().state();
    let app = state.app(&id).ok_or(StoreError::UnknownApp(id.clone()))?;
    Ok(Json(app.policy.clone()))
}

async fn app_settings(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AppSettings>> {
    Ok(Json(s.device.engine().app_settings(&id)?))
}

async fn session_start(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    if s.device.store().state().app(&id).is_none() {
        return Err(StoreError::UnknownApp(id).into());
    }
    s.device.engine().session_start(&id);
    Ok(StatusCode::NO_CONTENT)
}

// ---- settings ----

async fn record_policy(
    State(s): State<AppState>,
    Body(new): Body<NewUserPolicy>,
) -> ApiResult<(StatusCode, Json<UserPolicy>)> {
    Ok((StatusCode::CREATED, Json(s.device.store().record_user_policy(new)?)))
}

async fn global_settings(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<Json<GlobalSettings>> {
    let permission = s
        .device
        .engine()
        .catalog()
        .permission(&raw)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "unknown_permission", e))?;
    Ok(Json(s.device.engine().global_settings(&permission)?))
}

async fn quick_settings(State(s): State<AppState>) -> Json<QuickSettings> {
    Json(s.device.store().state().quick_settings.clone())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToggleBody {
    sensor: Sensor,
    state: SensorState,
}

async fn set_quick_setting(State(s): State<AppState>, Body(t): Body<ToggleBody>) -> ApiResult<Json<QuickSettings>> {
    s.device.store().set_quick_setting(t.sensor, t.state)?;
    Ok(Json(s.device.store().state().quick_settings.clone()))
}

async fn active_profile(State(s): State<AppState>) -> Json<Option<OrgProfile>> {
    Json(s.device.store().state().active_profile().cloned())
}

async fn install_profile(
    State(s): State<AppState>,
    Body(profile): Body<OrgProfile>,
) -> ApiResult<(StatusCode, Json<OrgProfile>)> {
    let id = profile.id.clone();
    s.device.store().install_org_profile(profile)?;
    let state = s.device.store().state();
    let stored = state
        .org_profiles
        .get(&id)
        .cloned()
        .ok_or(StoreError::ProfileNotFound(id))?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn remove_profile(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<StatusCode> {
    let token = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    s.device.store().remove_org_profile(&id, token)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- notifications ----

#[derive(Debug, Default, Deserialize)]
struct NotificationQuery {
    #[serde(default)]
    all: bool,
}

async fn notifications(State(s): State<AppState>, Query(q): Query<NotificationQuery>) -> Json<Vec<Notification>> {
    let engine = s.device.engine();
    Json(if q.all {
        engine.all_notifications()
    } else {
        engine.notifications()
    })
}

async fn dismiss_notification(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    if s.device.engine().dismiss_notification(id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_notification",
            format!("no notification {id}"),
        ))
    }
}

// ---- prompts and requests ----

fn event_name(e: &PromptEvent) -> &'static str {
    match e {
        PromptEvent::Issued { .. } => "issued",
        PromptEvent::Answered { .. } => "answered",
        PromptEvent::Expired { .. } => "expired",
    }
}

fn sse_event(e: &PromptEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event(event_name(e))
        .json_data(e)
        .expect("prompt events serialize"))
}

/// Outstanding prompts first, then live events.
async fn prompt_stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let engine = s.device.engine();
    let rx = engine.subscribe();
    let backlog = engine.outstanding_prompts();
    let seen: BTreeSet<PromptId> = backlog.iter().map(|t| t.prompt_id).collect();
    let initial: Vec<_> = backlog
        .into_iter()
        .map(|ticket| sse_event(&PromptEvent::Issued { ticket }))
        .collect();
    let live = stream::unfold((rx, seen), |(mut rx, seen)| async move {
        loop {
            match rx.recv().await {
                Ok(PromptEvent::Issued { ticket }) if seen.contains(&ticket.prompt_id) => continue,
                Ok(e) => return Some((sse_event(&e), (rx, seen))),
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "prompt subscriber lagged");
                }
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream::iter(initial).chain(live)).keep_alive(KeepAlive::default())
}

async fn outstanding_prompts(State(s): State<AppState>) -> Json<Vec<PromptTicket>> {
    Json(s.device.engine().outstanding_prompts())
}

/// Accepts `3` or `prompt-3`.
fn parse_prompt_id(raw: &str) -> ApiResult<PromptId> {
    raw.strip_prefix("prompt-")
        .unwrap_or(raw)
        .parse()
        .map(PromptId)
        .map_err(|_| bad_request(format!("invalid prompt id `{raw}`")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    action: Verdict,
    #[serde(default)]
    remember: Remember,
}

async fn answer_prompt(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    Body(a): Body<AnswerBody>,
) -> ApiResult<Json<Decision>> {
    let id = parse_prompt_id(&raw)?;
    Ok(Json(s.device.engine().answer_prompt(id, a.action, a.remember)?))
}

#[derive(Debug, Default, Deserialize)]
struct RequestQuery {
    /// Hold the response until the prompt is answered or times out.
    #[serde(default)]
    wait: bool,
}

async fn submit_request(
    State(s): State<AppState>,
    Query(q): Query<RequestQuery>,
    Body(request): Body<PermissionRequest>,
) -> ApiResult<Json<Value>> {
    let engine = s.device.engine();
    if !q.wait {
        let r: Resolution = engine.resolve(request)?;
        return Ok(Json(serde_json::to_value(r).expect("resolution serializes")));
    }
    let decision = match request.kind {
        RequestKind::DangerousPermission => engine.on_dangerous_permission_request(request).await?,
        RequestKind::PrivateData => engine.on_private_data_request(request).await?,
    };
    Ok(Json(
        serde_json::to_value(Resolution::Decided(decision)).expect("resolution serializes"),
    ))
}

async fn decisions(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.device.engine().decision_log()).expect("decision log serializes"))
}

// ---- home screen ----

#[derive(Debug, Default, Deserialize)]
struct SummaryQuery {
    window: Option<String>,
}

async fn summary(State(s): State<AppState>, Query(q): Query<SummaryQuery>) -> ApiResult<Json<UsageSummary>> {
    let window: Window = match q.window {
        Some(w) => w.parse().map_err(bad_request)?,
        None => Window::Day,
    };
    Ok(Json(s.device.summary(window)))
}

async fn app_groups(State(s): State<AppState>) -> Json<AppGroups> {
    Json(s.device.app_groups())
}

async fn recommendations(State(s): State<AppState>) -> Json<Vec<Recommendation>> {
    Json(s.device.recommendations())
}

// ---- scenarios ----

#[derive(Debug, Default, Deserialize)]
struct RunQuery {
    #[serde(default)]
    mode: RunMode,
}

async fn run_scenario_route(
    State(s): State<AppState>,
    Query(q): Query<RunQuery>,
    Body(scenario): Body<Scenario>,
) -> ApiResult<Json<RunReport>> {
    let report = match q.mode {
        RunMode::Batch => {
            let engine = s.device.engine();
            let (catalog, facts, config) = (
                engine.catalog().clone(),
                engine.facts().clone(),
                engine.config().clone(),
            );
            let repository = s.repository.clone();
            tokio::task::spawn_blocking(move || run_scenario(&scenario, catalog, facts, config, repository))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))??
        }
        RunMode::Interactive => run_interactive(&s.device, &scenario).await?,
    };
    Ok(Json(report))
}
