//! HTTP API over a [`ControlPlane`].

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::oneshot;
use ualm_core::audit::bundle::BundleFilter;
use ualm_core::audit::FileStore;
use ualm_core::audit::{AuditLog, EventKind};
use ualm_core::clock::{Clock, LogicalClock, SystemClock, Timestamp};
use ualm_core::digest::Digest32;
use ualm_core::domain::Actor;
use ualm_core::ids::{AgentId, CaseId, CredentialId, DecisionId, PersonId, RequestId, TriggerId};
use ualm_core::lifecycle::ObservedConfig;
use ualm_core::mediation::{ConflictCase, SimulatedExecutor, ToolCallRequest};
use ualm_core::metrics::{assess_maturity, Window};
use ualm_core::plane::{ControlError, PlaneConfig};
use ualm_core::registry::{AgentDraft, ApprovedBaseline};
use ualm_core::ControlPlane;

use crate::config::{ConfigError, ServiceConfig};
use crate::wire::*;

/// A failed request: HTTP status plus the `{code, message, detail}` envelope.
#[derive(Debug)]
pub struct ApiFailure {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiFailure {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.to_owned(), message: message.into(), detail: serde_json::Value::Null } }
    }
}

/// HTTP status for an error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "unknown_agent" | "unknown_target" | "unknown_entry" | "unknown_policy_version" | "not_found" => {
            StatusCode::NOT_FOUND
        }
        "invalid_state" | "invalid_transition" | "already_resolved" | "duplicate_persona_in_domain" | "frozen"
        | "agent_not_active" => StatusCode::CONFLICT,
        "missing_operator" | "unauthenticated" => StatusCode::UNAUTHORIZED,
        "unknown_operator" | "not_owner" => StatusCode::FORBIDDEN,
        "storage_failure" | "corrupt_log" | "injected_fault" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<ControlError> for ApiFailure {
    fn from(e: ControlError) -> Self {
        let code = e.code();
        let detail = match &e {
            ControlError::Policy(ualm_core::policy::PolicyError::Parse(p)) => {
                serde_json::json!({ "line": p.line, "field": p.field })
            }
            _ => serde_json::Value::Null,
        };
        Self { status: status_for(code), body: ErrorBody { code: code.to_owned(), message: e.to_string(), detail } }
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ApiFailure>;

fn reply<T: Serialize, E: Into<ApiFailure>>(r: Result<T, E>) -> Reply<T> {
    r.map(Json).map_err(Into::into)
}

/// JSON body whose rejection uses the error envelope.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiFailure;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiFailure> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiFailure::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())),
        }
    }
}

/// The operator named by `x-operator-id`, checked against the configured list.
pub struct Operator(pub Actor);

impl FromRequestParts<AppState> for Operator {
    type Rejection = ApiFailure;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiFailure> {
        let Some(value) = parts.headers.get(OPERATOR_HEADER) else {
            return Err(ApiFailure::new(StatusCode::UNAUTHORIZED, "missing_operator", "x-operator-id header is required"));
        };
        let id = value.to_str().unwrap_or("").trim();
        if id.is_empty() {
            return Err(ApiFailure::new(StatusCode::UNAUTHORIZED, "missing_operator", "x-operator-id header is empty"));
        }
        if !state.shared.operators.contains(id) {
            return Err(ApiFailure::new(StatusCode::FORBIDDEN, "unknown_operator", format!("operator `{id}` is not configured")));
        }
        Ok(Operator(Actor::operator(id)))
    }
}

struct Shared {
    plane: Arc<ControlPlane>,
    operators: BTreeSet<String>,
    clock: Option<Arc<LogicalClock>>,
    kpi_window: Option<ualm_core::clock::Millis>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(
        plane: Arc<ControlPlane>,
        operators: BTreeSet<String>,
        clock: Option<Arc<LogicalClock>>,
        kpi_window: Option<ualm_core::clock::Millis>,
    ) -> Self {
        Self { shared: Arc::new(Shared { plane, operators, clock, kpi_window }) }
    }

    pub fn plane(&self) -> &Arc<ControlPlane> {
        &self.shared.plane
    }

    fn window(&self, text: Option<&String>) -> Result<Option<Window>, ApiFailure> {
        let now = self.plane().now();
        match text {
            Some(s) => parse_window(s, now).map_err(|m| ApiFailure::new(StatusCode::BAD_REQUEST, "invalid_argument", m)),
            None => Ok(self.shared.kpi_window.map(|span| Window { start: now - span, end: now })),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open data directory: {0}")]
    Storage(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("startup policy rejected: {0}")]
    Policy(ControlError),
}

/// Opens the log in `data_dir`, replays it and loads the startup policy.
pub fn build_state(config: &ServiceConfig) -> Result<AppState, ServeError> {
    std::fs::create_dir_all(&config.data_dir).map_err(|e| ServeError::Storage(e.to_string()))?;
    let store = FileStore::open(config.data_dir.join("audit.log"), config.fsync).map_err(|e| ServeError::Storage(e.to_string()))?;
    let log = AuditLog::open(Box::new(store)).map_err(|e| ServeError::Storage(e.to_string()))?;
    let (clock, logical): (Arc<dyn Clock>, Option<Arc<LogicalClock>>) = if config.logical_clock {
        let start = log.events().last().map_or(Timestamp(0), |e| e.timestamp);
        let c = Arc::new(LogicalClock::new(start));
        (c.clone(), Some(c))
    } else {
        (Arc::new(SystemClock), None)
    };
    let plane_config = PlaneConfig {
        catalog: config.catalog.clone(),
        retention: config.retention.clone(),
        triggers: config.triggers.clone(),
        id_seed: config.id_seed,
        auto_supervise: config.auto_supervise,
    };
    let plane = ControlPlane::with_log(plane_config, clock, Arc::new(SimulatedExecutor::default()), log)
        .map_err(|e| ServeError::Storage(e.to_string()))?;
    if let Some(doc) = &config.policy {
        let current = plane.policy(None).ok().map(|p| p.source_digest);
        if current != Some(Digest32::of(doc.as_bytes())) {
            plane.load_policy(&Actor::System, doc).map_err(ServeError::Policy)?;
        }
    }
    Ok(AppState::new(Arc::new(plane), config.operators.clone(), logical, config.kpi_window))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/agents", get(list_agents).post(register_agent))
        .route("/v1/agents/{id}", get(get_agent))
        .route("/v1/agents/{id}/approve", post(approve_agent))
        .route("/v1/agents/{id}/owner", post(reassign_owner))
        .route("/v1/agents/{id}/baseline", post(update_baseline))
        .route("/v1/agents/{id}/overlaps", get(overlaps))
        .route("/v1/agents/{id}/credentials", get(list_credentials).post(issue_credential))
        .route("/v1/agents/{id}/credentials/revoke", post(revoke_credentials))
        .route("/v1/agents/{id}/transition", post(transition))
        .route("/v1/agents/{id}/decommission", post(decommission))
        .route("/v1/agents/{id}/kill", post(kill))
        .route("/v1/agents/{id}/supervise", post(supervise))
        .route("/v1/agents/{id}/drift", post(detect_drift))
        .route("/v1/agents/{id}/incidents", post(report_incident))
        .route("/v1/agents/{id}/termination", get(termination))
        .route("/v1/agents/{id}/memory/freeze", post(freeze_memory))
        .route("/v1/agents/{id}/memory/frozen", get(frozen_memory))
        .route("/v1/owners/{person}/deactivate", post(deactivate_owner))
        .route("/v1/credentials/{id}/validate", get(validate_credential))
        .route("/v1/policies", post(load_policy))
        .route("/v1/policies/latest", get(latest_policy))
        .route("/v1/policies/evaluate", post(evaluate))
        .route("/v1/policies/{version}", get(get_policy))
        .route("/v1/mediate", post(mediate))
        .route("/v1/ungoverned", post(ungoverned))
        .route("/v1/decisions/{id}", get(get_decision))
        .route("/v1/outcomes/{id}", get(get_outcome))
        .route("/v1/messages", post(route_message))
        .route("/v1/memory/write", post(write_memory))
        .route("/v1/memory/read", post(read_memory))
        .route("/v1/memory/update", post(update_memory))
        .route("/v1/memory/expire", post(expire_memory))
        .route("/v1/sweeps/expired", post(sweep_expired))
        .route("/v1/conflicts", post(resolve_conflict))
        .route("/v1/conflicts/{id}", get(get_conflict))
        .route("/v1/pending", get(pending))
        .route("/v1/pending/verdict", post(verdict))
        .route("/v1/audit/verify", get(verify_audit))
        .route("/v1/audit/events", get(audit_events))
        .route("/v1/audit/bundle", post(export_bundle))
        .route("/v1/kpi", get(kpi))
        .route("/v1/kpi/snapshot", post(record_kpi))
        .route("/v1/maturity", post(maturity))
        .route("/v1/admin/clock", get(get_clock).post(set_clock))
        .fallback(not_found)
        .with_state(state)
}

async fn not_found(req: Request) -> ApiFailure {
    ApiFailure::new(StatusCode::NOT_FOUND, "not_found", format!("no endpoint {} {}", req.method(), req.uri().path()))
}

fn missing(what: &str, id: &str) -> ApiFailure {
    ApiFailure::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} {id}"))
}

async fn list_agents(State(s): State<AppState>) -> Reply<Vec<ualm_core::registry::AgentRecord>> {
    Ok(Json(s.plane().agents()))
}

async fn register_agent(State(s): State<AppState>, Operator(op): Operator, Body(draft): Body<AgentDraft>) -> impl IntoResponse {
    reply(s.plane().register_agent(&op, draft))
}

async fn get_agent(State(s): State<AppState>, Path(id): Path<AgentId>) -> impl IntoResponse {
    reply(s.plane().agent(&id))
}

async fn approve_agent(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<ApproveBody>,
) -> impl IntoResponse {
    reply(s.plane().approve_agent(&op, &id, b.owner, b.liability_owner, b.expiration, b.baseline))
}

async fn reassign_owner(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<OwnerBody>,
) -> impl IntoResponse {
    reply(s.plane().reassign_owner(&op, &id, b.owner, b.liability_owner))
}

async fn update_baseline(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<ApprovedBaseline>,
) -> impl IntoResponse {
    reply(s.plane().update_baseline(&op, &id, b))
}

async fn overlaps(
    State(s): State<AppState>,
    Path(id): Path<AgentId>,
    Query(q): Query<HashMap<String, String>>,
) -> impl IntoResponse {
    let threshold = q.get("threshold").and_then(|t| t.parse().ok()).unwrap_or(0.5);
    reply(s.plane().find_overlapping(&id, threshold))
}

async fn list_credentials(State(s): State<AppState>, Path(id): Path<AgentId>) -> impl IntoResponse {
    s.plane().agent(&id).map_err(ApiFailure::from)?;
    Ok::<_, ApiFailure>(Json(s.plane().credentials_of(&id)))
}

async fn issue_credential(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<CredentialBody>,
) -> impl IntoResponse {
    reply(s.plane().issue_credential(&op, &id, b.scope, ualm_core::clock::Millis(b.ttl_ms)))
}

async fn revoke_credentials(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<ReasonBody>,
) -> impl IntoResponse {
    reply(s.plane().revoke_credentials(&op, &id, &b.reason).map(|count| Count { count }))
}

async fn transition(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<TransitionBody>,
) -> impl IntoResponse {
    reply(s.plane().transition(&op, &id, b.event, &b.reason))
}

async fn decommission(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<ReasonBody>,
) -> impl IntoResponse {
    reply(s.plane().decommission(&op, &id, &b.reason))
}

async fn kill(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<KillBody>,
) -> impl IntoResponse {
    let trigger = b.trigger_id.unwrap_or_else(|| TriggerId::from("manual"));
    reply(s.plane().fire_kill_switch(&op, &id, &trigger, &b.reason))
}

async fn supervise(State(s): State<AppState>, Operator(_): Operator, Path(id): Path<AgentId>) -> impl IntoResponse {
    reply(s.plane().supervise(&id))
}

async fn detect_drift(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<ObservedConfig>,
) -> impl IntoResponse {
    reply(s.plane().detect_drift(&op, &id, b))
}

async fn report_incident(
    State(s): State<AppState>,
    Operator(op): Operator,
    Path(id): Path<AgentId>,
    Body(b): Body<IncidentBody>,
) -> impl IntoResponse {
    reply(s.plane().report_incident(&op, &id, b.kind, b.severity, &b.note))
}

async fn termination(State(s): State<AppState>, Path(id): Path<AgentId>) -> impl IntoResponse {
    s.plane().termination_report(&id).map(Json).ok_or_else(|| missing("termination report for", id.as_str()))
}

async fn freeze_memory(State(s): State<AppState>, Operator(op): Operator, Path(id): Path<AgentId>) -> impl IntoResponse {
    reply(s.plane().freeze_memories(&op, &id).map(|count| Count { count }))
}

async fn frozen_memory(State(s): State<AppState>, Operator(_): Operator, Path(id): Path<AgentId>) -> impl IntoResponse {
    s.plane().agent(&id).map_err(ApiFailure::from)?;
    Ok::<_, ApiFailure>(Json(s.plane().export_frozen(&id)))
}

async fn deactivate_owner(State(s): State<AppState>, Operator(op): Operator, Path(person): Path<PersonId>) -> impl IntoResponse {
    reply(s.plane().deactivate_owner(&op, &person))
}

async fn validate_credential(
    State(s): State<AppState>,
    Path(id): Path<CredentialId>,
    Query(q): Query<HashMap<String, String>>,
) -> impl IntoResponse {
    let at = q.get("at").and_then(|t| t.parse().ok()).map_or_else(|| s.plane().now(), Timestamp);
    Json(s.plane().validate_credential(&id, at))
}

fn policy_info(p: &ualm_core::policy::PolicyVersion) -> PolicyInfo {
    PolicyInfo { version: p.version, rule_count: p.rules.len() as u64, source_digest: p.source_digest, loaded_at: p.loaded_at }
}

async fn load_policy(State(s): State<AppState>, Operator(op): Operator, Body(b): Body<PolicyBody>) -> impl IntoResponse {
    reply(s.plane().load_policy(&op, &b.document).map(|p| policy_info(&p)))
}

async fn latest_policy(State(s): State<AppState>) -> impl IntoResponse {
    reply(s.plane().policy(None).map(|p| (*p).clone()))
}

async fn get_policy(State(s): State<AppState>, Path(version): Path<u64>) -> impl IntoResponse {
    reply(s.plane().policy(Some(version)).map(|p| (*p).clone()))
}

async fn evaluate(State(s): State<AppState>, Body(b): Body<EvaluateBody>) -> impl IntoResponse {
    reply(s.plane().evaluate(&b.request, b.version))
}

async fn mediate(State(s): State<AppState>, Body(req): Body<ToolCallRequest>) -> impl IntoResponse {
    reply(s.plane().mediate(req))
}

async fn ungoverned(State(s): State<AppState>, Body(req): Body<ToolCallRequest>) -> impl IntoResponse {
    reply(s.plane().record_ungoverned_call(req))
}

async fn get_decision(State(s): State<AppState>, Path(id): Path<DecisionId>) -> impl IntoResponse {
    s.plane().decision(&id).map(Json).ok_or_else(|| missing("decision", id.as_str()))
}

async fn get_outcome(State(s): State<AppState>, Path(id): Path<RequestId>) -> impl IntoResponse {
    s.plane().outcome(&id).map(Json).ok_or_else(|| missing("outcome for request", id.as_str()))
}

async fn route_message(State(s): State<AppState>, Body(b): Body<MessageBody>) -> impl IntoResponse {
    reply(s.plane().route_message(&b.from, &b.to, &b.credential_id, b.payload_digest, &b.intent))
}

async fn write_memory(State(s): State<AppState>, Body(b): Body<MemoryWriteBody>) -> impl IntoResponse {
    s.plane().authenticate(&b.credential_id, &b.agent_id)?;
    reply(s.plane().write_memory(&b.agent_id, b.draft).map(|entry_id| EntryCreated { entry_id }))
}

async fn read_memory(State(s): State<AppState>, Body(b): Body<MemoryReadBody>) -> impl IntoResponse {
    s.plane().authenticate(&b.credential_id, &b.agent_id)?;
    reply(s.plane().read_memory(&b.agent_id, b.query))
}

async fn update_memory(State(s): State<AppState>, Body(b): Body<MemoryUpdateBody>) -> impl IntoResponse {
    s.plane().authenticate(&b.credential_id, &b.agent_id)?;
    let payload = hex::decode(&b.payload)
        .map_err(|e| ApiFailure::new(StatusCode::BAD_REQUEST, "invalid_argument", format!("payload: {e}")))?;
    reply(s.plane().update_memory(&b.agent_id, &b.entry_id, payload))
}

async fn expire_memory(State(s): State<AppState>, Operator(op): Operator) -> impl IntoResponse {
    reply(s.plane().expire_memories(&op).map(|count| Count { count }))
}

async fn sweep_expired(State(s): State<AppState>, Operator(op): Operator) -> impl IntoResponse {
    reply(s.plane().sweep_expired(&op))
}

async fn resolve_conflict(State(s): State<AppState>, Operator(op): Operator, Body(case): Body<ConflictCase>) -> impl IntoResponse {
    reply(s.plane().resolve_conflict(&op, case))
}

async fn get_conflict(State(s): State<AppState>, Path(id): Path<CaseId>) -> impl IntoResponse {
    s.plane().conflict(&id).map(Json).ok_or_else(|| missing("conflict case", id.as_str()))
}

async fn pending(State(s): State<AppState>) -> Json<PendingList> {
    Json(PendingList { requests: s.plane().pending_requests(), conflicts: s.plane().escalated_conflicts() })
}

async fn verdict(State(s): State<AppState>, Operator(op): Operator, Body(b): Body<VerdictBody>) -> impl IntoResponse {
    let Actor::Operator(id) = op else { unreachable!("extractor yields operators") };
    reply(s.plane().submit_human_verdict(&id, b.target, b.verdict, &b.note))
}

fn query_u64(q: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ApiFailure> {
    q.get(key)
        .map(|v| v.parse().map_err(|_| ApiFailure::new(StatusCode::BAD_REQUEST, "invalid_argument", format!("{key}: `{v}`"))))
        .transpose()
}

async fn verify_audit(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> impl IntoResponse {
    let len = s.plane().event_count();
    match (query_u64(&q, "from")?, query_u64(&q, "to")?) {
        (None, None) => reply(s.plane().verify_all()),
        (from, to) => reply(s.plane().verify_chain(from.unwrap_or(1), to.unwrap_or(len))),
    }
}

async fn audit_events(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> impl IntoResponse {
    let from = query_u64(&q, "from")?.unwrap_or(1);
    let to = query_u64(&q, "to")?.unwrap_or(u64::MAX);
    let limit = query_u64(&q, "limit")?.unwrap_or(u64::MAX);
    let kind = match q.get("kind") {
        Some(k) => Some(
            EventKind::parse(k)
                .ok_or_else(|| ApiFailure::new(StatusCode::BAD_REQUEST, "invalid_argument", format!("unknown event kind `{k}`")))?,
        ),
        None => None,
    };
    let agent = q.get("agent").map(|a| AgentId::from(a.as_str()));
    let views: Vec<EventView> = s
        .plane()
        .events()
        .iter()
        .filter(|e| (from..=to).contains(&e.seq))
        .filter(|e| kind.is_none_or(|k| e.kind == k))
        .filter(|e| agent.as_ref().is_none_or(|a| EventView::mentions(e, a)))
        .take(usize::try_from(limit).unwrap_or(usize::MAX))
        .map(EventView::of)
        .collect();
    Ok::<_, ApiFailure>(Json(views))
}

async fn export_bundle(State(s): State<AppState>, Operator(_): Operator, Body(filter): Body<BundleFilter>) -> Response {
    let bytes = s.plane().export_bundle(&filter);
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

async fn kpi(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> impl IntoResponse {
    let window = s.window(q.get("window"))?;
    reply(s.plane().compute_snapshot(window))
}

async fn record_kpi(State(s): State<AppState>, Operator(op): Operator, Query(q): Query<HashMap<String, String>>) -> impl IntoResponse {
    let window = s.window(q.get("window"))?;
    reply(s.plane().record_kpi_snapshot(&op, window))
}

async fn maturity(State(s): State<AppState>, Body(b): Body<MaturityBody>) -> impl IntoResponse {
    let window = s.window(b.window.as_ref())?;
    let snapshot = s.plane().compute_snapshot(window)?;
    let t = b.thresholds.unwrap_or_default();
    Ok::<_, ApiFailure>(Json(assess_maturity(&snapshot, b.features, t, s.plane().now())))
}

async fn get_clock(State(s): State<AppState>) -> Json<ClockBody> {
    Json(ClockBody { now: s.plane().now() })
}

async fn set_clock(State(s): State<AppState>, Operator(_): Operator, Body(b): Body<ClockBody>) -> impl IntoResponse {
    let Some(clock) = &s.shared.clock else {
        return Err(ApiFailure::new(StatusCode::CONFLICT, "invalid_state", "the service runs on the system clock"));
    };
    clock.set(b.now);
    Ok(Json(ClockBody { now: b.now }))
}

/// Serves until `shutdown` resolves, then flushes the audit log.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let plane = state.plane().clone();
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    plane.flush().map_err(|e| std::io::Error::other(e.to_string()))
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub plane: Arc<ControlPlane>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Graceful stop; returns once the log is flushed.
    pub fn stop(mut self) -> std::io::Result<()> {
        self.halt()
    }

    fn halt(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}

pub fn spawn(state: AppState, addr: SocketAddr) -> Result<ServerHandle, ServeError> {
    let std_listener = std::net::TcpListener::bind(addr).map_err(|e| ServeError::Bind { addr, message: e.to_string() })?;
    std_listener.set_nonblocking(true).map_err(|e| ServeError::Bind { addr, message: e.to_string() })?;
    let local = std_listener.local_addr().map_err(|e| ServeError::Bind { addr, message: e.to_string() })?;
    let (tx, rx) = oneshot::channel::<()>();
    let plane = state.plane().clone();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            serve(listener, state, async move {
                let _ = rx.await;
            })
            .await
        })
    });
    Ok(ServerHandle { addr: local, plane, shutdown: Some(tx), thread: Some(thread) })
}
