//! HTTP session service for the labeling console.
//!
//! Each session owns one [`Engine`] behind a read-write lock: a label takes
//! the write side, so mutations of one session are serialized, while reads
//! see a consistent snapshot. The pending query and its payload are
//! computed when the session is created and after every label, so GET
//! requests never mutate. Sessions are event-sourced: `events.jsonl` holds
//! the creation record and each accepted label, and reopening the data
//! directory replays them.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use aad_core::active::HistoryRecord;
use aad_core::data::Label;
use aad_core::glad::PrimeStatus;
use aad_core::rules::RuleSet;
use aad_core::stream::DriftReport;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::{Arm, Mode, RunConfig};
use crate::csv_io::LoadedCsv;
use crate::engine::Engine;
use crate::harness::{code_version, load_dataset};
use crate::metrics::discovery_curve;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("instance {submitted} is not the pending query")]
    Stale { submitted: usize, pending: Option<usize> },
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("cannot replay session {session}: {reason}")]
    Replay { session: String, reason: String },
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pending: Option<Option<usize>>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind, pending) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found", None),
            ServiceError::Stale { pending, .. } => (StatusCode::CONFLICT, "conflict", Some(*pending)),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad-request", None),
            ServiceError::Replay { .. } | ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        (status, Json(ErrorBody { error: kind, message: self.to_string(), pending })).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

/// One line of a session's `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum Event {
    Created { session_id: String, config: RunConfig, seed: u64, code_version: String },
    Label { instance_id: usize, label: Label },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub spent: usize,
    pub budget: usize,
    pub remaining: usize,
    pub anomalies_found: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Pending,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub value: f64,
}

/// Payload of `GET /sessions/{id}/query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub status: SessionStatus,
    pub instance_id: Option<usize>,
    /// In column order.
    pub features: Option<Vec<FeatureValue>>,
    pub score: Option<f64>,
    /// Compact description of the pending instance.
    pub rules: Option<RuleSet>,
    pub rules_text: Option<String>,
    /// GLAD sessions: member relevance at the pending instance.
    pub relevance: Option<Vec<f64>>,
    pub most_relevant_member: Option<usize>,
    pub progress: Progress,
}

/// Payload of `GET /sessions/{id}/progress`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressPayload {
    pub session_id: String,
    pub mode: Mode,
    pub arm: Arm,
    pub progress: Progress,
    /// Anomalies seen after each query, starting with 0.
    pub curve: Vec<usize>,
    pub history: Vec<HistoryRecord>,
    pub drift: Vec<DriftReport>,
    pub prime_status: Option<PrimeStatus>,
}

/// Payload of `GET /sessions/{id}/rules`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesPayload {
    pub session_id: String,
    /// `None` for arms without subspace descriptions.
    pub rules: Option<RuleSet>,
    pub rules_text: Option<String>,
    pub feature_names: Vec<String>,
}

/// Payload of `GET /sessions/{id}/relevance` (GLAD sessions only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancePayload {
    pub session_id: String,
    /// One relevance vector per instance.
    pub relevance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub mode: Mode,
    pub arm: Arm,
    pub instances: usize,
    pub feature_names: Vec<String>,
    pub query: QueryPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub instance_id: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub progress: Progress,
    pub query: QueryPayload,
}

struct Session {
    id: String,
    config: RunConfig,
    data: LoadedCsv,
    engine: Engine,
    pending: Option<usize>,
    payload: QueryPayload,
    log: Option<PathBuf>,
}

impl Session {
    fn build(id: String, config: RunConfig, seed: u64) -> Result<Session, ServiceError> {
        config.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let data = load_dataset(&config, seed).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let engine = Engine::build(&config, data.dataset.features(), seed).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let progress = progress_of(&engine, None);
        let mut session = Session {
            id,
            config,
            data,
            engine,
            pending: None,
            payload: QueryPayload {
                status: SessionStatus::Completed,
                instance_id: None,
                features: None,
                score: None,
                rules: None,
                rules_text: None,
                relevance: None,
                most_relevant_member: None,
                progress,
            },
            log: None,
        };
        session.advance()?;
        Ok(session)
    }

    /// Selects the next query and precomputes its payload.
    fn advance(&mut self) -> Result<(), ServiceError> {
        self.pending = self.engine.next_query().map_err(internal)?;
        let progress = progress_of(&self.engine, self.pending);
        self.payload = match self.pending {
            None => QueryPayload {
                status: SessionStatus::Completed,
                instance_id: None,
                features: None,
                score: None,
                rules: None,
                rules_text: None,
                relevance: None,
                most_relevant_member: None,
                progress,
            },
            Some(id) => {
                let row = self.data.dataset.features().row(id);
                let rules = self.engine.query_rules(id).map_err(internal)?;
                QueryPayload {
                    status: SessionStatus::Pending,
                    instance_id: Some(id),
                    features: Some(self.data.feature_names.iter().zip(row).map(|(n, &v)| FeatureValue { name: n.clone(), value: v }).collect()),
                    score: self.engine.score(id),
                    rules_text: rules.as_ref().map(RuleSet::to_text),
                    rules,
                    relevance: self.engine.relevance(id),
                    most_relevant_member: self.engine.most_relevant_member(id),
                    progress,
                }
            }
        };
        Ok(())
    }

    fn submit(&mut self, instance_id: usize, label: Label) -> Result<(), ServiceError> {
        if self.pending != Some(instance_id) {
            return Err(ServiceError::Stale { submitted: instance_id, pending: self.pending });
        }
        self.engine.submit(instance_id, label).map_err(internal)?;
        self.advance()
    }

    fn append(&self, event: &Event) -> Result<(), ServiceError> {
        let Some(path) = &self.log else { return Ok(()) };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(internal)?;
        let mut line = serde_json::to_vec(event).map_err(internal)?;
        line.push(b'\n');
        file.write_all(&line).and_then(|_| file.sync_data()).map_err(internal)
    }

    fn progress_payload(&self) -> ProgressPayload {
        ProgressPayload {
            session_id: self.id.clone(),
            mode: self.config.mode(),
            arm: self.config.arm,
            progress: self.payload.progress,
            curve: discovery_curve(self.engine.history()),
            history: self.engine.history().to_vec(),
            drift: self.engine.drift_reports().to_vec(),
            prime_status: self.engine.prime_status(),
        }
    }
}

fn progress_of(engine: &Engine, pending: Option<usize>) -> Progress {
    let spent = engine.history().len();
    let budget = engine.budget();
    Progress {
        spent,
        budget,
        remaining: budget.saturating_sub(spent),
        anomalies_found: engine.history().last().map_or(0, |h| h.num_anomalies_so_far),
        completed: pending.is_none(),
    }
}

type SessionHandle = Arc<RwLock<Session>>;

/// All live sessions, optionally persisted under a data directory.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

const EVENTS_FILE: &str = "events.jsonl";

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore { dir: None, sessions: RwLock::new(BTreeMap::new()), next_id: AtomicU64::new(1) }
    }

    /// Opens a data directory, replaying every session found in it.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir).map_err(internal)?;
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        let mut entries: Vec<PathBuf> = fs::read_dir(dir).map_err(internal)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for path in entries {
            let log = path.join(EVENTS_FILE);
            if !log.is_file() {
                continue;
            }
            let session = replay(&log)?;
            max_id = max_id.max(session.id.parse::<u64>().unwrap_or(0));
            sessions.insert(session.id.clone(), Arc::new(RwLock::new(session)));
        }
        Ok(SessionStore { dir: Some(dir.to_path_buf()), sessions: RwLock::new(sessions), next_id: AtomicU64::new(max_id + 1) })
    }

    pub fn create(&self, request: CreateRequest) -> Result<CreateResponse, ServiceError> {
        let id = format!("{:08}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut session = Session::build(id.clone(), request.config.clone(), request.seed)?;
        if let Some(dir) = &self.dir {
            let session_dir = dir.join(&id);
            fs::create_dir_all(&session_dir).map_err(internal)?;
            session.log = Some(session_dir.join(EVENTS_FILE));
            session.append(&Event::Created { session_id: id.clone(), config: request.config, seed: request.seed, code_version: code_version() })?;
        }
        let response = CreateResponse {
            session_id: id.clone(),
            mode: session.config.mode(),
            arm: session.config.arm,
            instances: session.data.dataset.len(),
            feature_names: session.data.feature_names.clone(),
            query: session.payload.clone(),
        };
        self.sessions.write().map_err(internal)?.insert(id, Arc::new(RwLock::new(session)));
        Ok(response)
    }

    fn get(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.sessions.read().map_err(internal)?.get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().map(|s| s.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn query(&self, id: &str) -> Result<QueryPayload, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.read().map_err(internal)?;
        Ok(session.payload.clone())
    }

    pub fn label(&self, id: &str, request: LabelRequest) -> Result<LabelResponse, ServiceError> {
        let handle = self.get(id)?;
        let mut session = handle.write().map_err(internal)?;
        session.submit(request.instance_id, request.label)?;
        session.append(&Event::Label { instance_id: request.instance_id, label: request.label })?;
        Ok(LabelResponse { progress: session.payload.progress, query: session.payload.clone() })
    }

    pub fn progress(&self, id: &str) -> Result<ProgressPayload, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.read().map_err(internal)?;
        Ok(session.progress_payload())
    }

    pub fn rules(&self, id: &str) -> Result<RulesPayload, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.read().map_err(internal)?;
        let rules = session.engine.description().map_err(internal)?;
        Ok(RulesPayload {
            session_id: session.id.clone(),
            rules_text: rules.as_ref().map(RuleSet::to_text),
            rules,
            feature_names: session.data.feature_names.clone(),
        })
    }

    pub fn relevance(&self, id: &str) -> Result<RelevancePayload, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.read().map_err(internal)?;
        let relevance = (0..session.data.dataset.len())
            .map(|i| session.engine.relevance(i))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ServiceError::BadRequest("relevance is only defined for GLAD sessions".into()))?;
        Ok(RelevancePayload { session_id: session.id.clone(), relevance })
    }
}

fn replay(log: &Path) -> Result<Session, ServiceError> {
    let name = log.parent().and_then(Path::file_name).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let fail = |reason: String| ServiceError::Replay { session: name.clone(), reason };
    let file = File::open(log).map_err(|e| fail(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| fail("empty event log".into()))?.map_err(|e| fail(e.to_string()))?;
    let Event::Created { session_id, config, seed, .. } = serde_json::from_str(&first).map_err(|e| fail(e.to_string()))? else {
        return Err(fail("log does not start with a creation event".into()));
    };
    let mut session = Session::build(session_id, config, seed).map_err(|e| fail(e.to_string()))?;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| fail(format!("line {}: {e}", n + 2)))? {
            Event::Label { instance_id, label } => session.submit(instance_id, label).map_err(|e| fail(format!("line {}: {e}", n + 2)))?,
            Event::Created { .. } => return Err(fail(format!("line {}: second creation event", n + 2))),
        }
    }
    session.log = Some(log.to_path_buf());
    Ok(session)
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    store: Arc<SessionStore>,
}

impl AppState {
    pub fn new(store: SessionStore) -> Self {
        AppState { store: Arc::new(store) }
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }
}

/// Runs `f` on the blocking pool; engine work is CPU-bound.
async fn blocking<T, F>(state: AppState, f: F) -> Result<Json<T>, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&SessionStore) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state.store)).await.map_err(internal)?.map(Json)
}

fn body<T>(request: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    request.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn create(State(state): State<AppState>, request: Result<Json<CreateRequest>, JsonRejection>) -> Result<(StatusCode, Json<CreateResponse>), ServiceError> {
    let request = body(request)?;
    blocking(state, move |s| s.create(request)).await.map(|body| (StatusCode::CREATED, body))
}

async fn list(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.store.session_ids())
}

async fn query(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<QueryPayload>, ServiceError> {
    state.store.query(&id).map(Json)
}

async fn label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    request: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelResponse>, ServiceError> {
    let request = body(request)?;
    blocking(state, move |s| s.label(&id, request)).await
}

async fn progress(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ProgressPayload>, ServiceError> {
    state.store.progress(&id).map(Json)
}

async fn rules(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<RulesPayload>, ServiceError> {
    blocking(state, move |s| s.rules(&id)).await
}

async fn relevance(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<RelevancePayload>, ServiceError> {
    blocking(state, move |s| s.relevance(&id)).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/query", get(query))
        .route("/sessions/{id}/label", post(label))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/rules", get(rules))
        .route("/sessions/{id}/relevance", get(relevance))
        .with_state(state)
}
