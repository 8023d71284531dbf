//! Annotation queue for the human oracle: a transactional task store and
//! the JSON/HTTP API the annotator UI talks to.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tasks/next?annotator=ID` | assign the oldest pending task (204 when none) |
//! | POST | `/api/tasks/{id}/label` | `{"annotator": ID, "label": "Yes"}` |
//! | GET | `/api/batches/{id}` | batch counters |
//! | GET | `/api/experiments/{id}/status` | all batches of an experiment plus loop progress |
//!
//! Task states move `pending -> assigned -> labeled`; an assignment whose
//! lease lapses reads as `expired` and returns to `pending` on the next poll.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use atf_core::{Dimension, Label, Post};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(5 * 60);
pub const TOKEN_HEADER: &str = "x-atf-token";

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        ManualClock(AtomicI64::new(start_ms))
    }

    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.as_millis() as i64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("task store: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("cannot enqueue an empty batch")]
    EmptyBatch,
    #[error("posts already in flight: {}", .0.join(", "))]
    Conflict(Vec<String>),
    #[error("no task {0}")]
    UnknownTask(i64),
    #[error("no batch {0:?}")]
    UnknownBatch(String),
    #[error("task {task} is assigned to another annotator")]
    WrongAnnotator { task: i64 },
    #[error("task {0} is already labeled")]
    AlreadyLabeled(i64),
    #[error("lease on task {0} expired")]
    LeaseExpired(i64),
    #[error("task {0} is not assigned")]
    NotAssigned(i64),
}

impl StoreError {
    fn code(&self) -> &'static str {
        match self {
            StoreError::Sqlite(_) => "internal",
            StoreError::EmptyBatch => "empty_batch",
            StoreError::Conflict(_) => "conflict",
            StoreError::UnknownTask(_) | StoreError::UnknownBatch(_) => "not_found",
            StoreError::WrongAnnotator { .. } => "wrong_annotator",
            StoreError::AlreadyLabeled(_) => "already_labeled",
            StoreError::LeaseExpired(_) => "lease_expired",
            StoreError::NotAssigned(_) => "not_assigned",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            StoreError::Sqlite(_) => StatusCode::INTERNAL_SERVER_ERROR,
            StoreError::EmptyBatch => StatusCode::BAD_REQUEST,
            StoreError::UnknownTask(_) | StoreError::UnknownBatch(_) => StatusCode::NOT_FOUND,
            StoreError::WrongAnnotator { .. } => StatusCode::FORBIDDEN,
            StoreError::LeaseExpired(_) => StatusCode::GONE,
            StoreError::Conflict(_) | StoreError::AlreadyLabeled(_) | StoreError::NotAssigned(_) => StatusCode::CONFLICT,
        }
    }
}

type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Assigned,
    Labeled,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: i64,
    pub batch_id: String,
    pub post_id: String,
    pub dataset: String,
    pub text: String,
    pub dimension: String,
    pub definition: String,
    pub positive_token: String,
    pub negative_token: String,
    pub state: TaskState,
    pub label: Option<Label>,
    pub annotator: Option<String>,
    pub lease_expires_ms: Option<i64>,
    pub created_ms: i64,
    pub updated_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStatus {
    pub batch_id: String,
    pub experiment: String,
    pub dimension: String,
    pub total: u64,
    pub pending: u64,
    pub assigned: u64,
    pub labeled: u64,
    pub complete: bool,
    pub deadline_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub experiment: String,
    pub total: u64,
    pub labeled: u64,
    pub batches: Vec<BatchStatus>,
    /// Whatever the experiment loop last reported.
    pub progress: Option<Value>,
}

/// A labeled task as the loop consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabel {
    pub post_id: String,
    pub dataset: String,
    pub text: String,
    pub label: Label,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS batches (
    id TEXT PRIMARY KEY,
    experiment TEXT NOT NULL,
    dimension TEXT NOT NULL,
    created_ms INTEGER NOT NULL,
    deadline_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    batch_id TEXT NOT NULL REFERENCES batches(id),
    post_id TEXT NOT NULL,
    dataset TEXT NOT NULL,
    text TEXT NOT NULL,
    dimension TEXT NOT NULL,
    definition TEXT NOT NULL,
    positive_token TEXT NOT NULL,
    negative_token TEXT NOT NULL,
    state TEXT NOT NULL,
    label INTEGER,
    annotator TEXT,
    lease_expires_ms INTEGER,
    created_ms INTEGER NOT NULL,
    updated_ms INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS tasks_by_state ON tasks(state, id);
CREATE INDEX IF NOT EXISTS tasks_by_batch ON tasks(batch_id);
CREATE TABLE IF NOT EXISTS experiments (
    id TEXT PRIMARY KEY,
    progress TEXT NOT NULL,
    updated_ms INTEGER NOT NULL
);
";

const TASK_COLUMNS: &str = "id, batch_id, post_id, dataset, text, dimension, definition, positive_token, \
                            negative_token, state, label, annotator, lease_expires_ms, created_ms, updated_ms";

/// SQLite-backed task store. Several processes may share one file: the
/// experiment loop enqueues and polls while `atf serve` hands out tasks.
pub struct TaskStore {
    conn: Mutex<Connection>,
    clock: Arc<dyn Clock>,
    lease_ms: i64,
}

impl TaskStore {
    pub fn open(path: &Path) -> StoreResult<Self> {
        Self::open_with(path, Arc::new(SystemClock), DEFAULT_LEASE)
    }

    pub fn open_with(path: &Path, clock: Arc<dyn Clock>, lease: Duration) -> StoreResult<Self> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn, clock, lease)
    }

    pub fn in_memory(clock: Arc<dyn Clock>, lease: Duration) -> StoreResult<Self> {
        Self::init(Connection::open_in_memory()?, clock, lease)
    }

    fn init(conn: Connection, clock: Arc<dyn Clock>, lease: Duration) -> StoreResult<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(TaskStore { conn: Mutex::new(conn), clock, lease_ms: lease.as_millis() as i64 })
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    /// One pending task per post under a new batch.
    pub fn enqueue(&self, experiment: &str, posts: &[Post], dimension: &Dimension, deadline: Duration) -> StoreResult<String> {
        if posts.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        let now = self.now_ms();
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let mut in_flight = Vec::new();
        {
            let mut check = tx.prepare(
                "SELECT 1 FROM tasks WHERE post_id = ?1 AND dataset = ?2 AND dimension = ?3 \
                 AND state IN ('pending', 'assigned') LIMIT 1",
            )?;
            for p in posts {
                if check.exists(params![p.id, p.dataset, dimension.name])? {
                    in_flight.push(p.id.clone());
                }
            }
        }
        let mut ids: Vec<&str> = posts.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        for w in ids.windows(2).filter(|w| w[0] == w[1]) {
            in_flight.push(w[0].to_string());
        }
        if !in_flight.is_empty() {
            in_flight.dedup();
            return Err(StoreError::Conflict(in_flight));
        }
        let n: i64 = tx.query_row("SELECT COUNT(*) FROM batches", [], |r| r.get(0))?;
        let batch_id = format!("batch-{}", n + 1);
        tx.execute(
            "INSERT INTO batches (id, experiment, dimension, created_ms, deadline_ms) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![batch_id, experiment, dimension.name, now, now.saturating_add(deadline.as_millis() as i64)],
        )?;
        {
            let mut insert = tx.prepare(
                "INSERT INTO tasks (batch_id, post_id, dataset, text, dimension, definition, positive_token, \
                 negative_token, state, created_ms, updated_ms) \
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, 'pending', ?9, ?9)",
            )?;
            for p in posts {
                insert.execute(params![
                    batch_id,
                    p.id,
                    p.dataset,
                    p.text,
                    dimension.name,
                    dimension.definition,
                    dimension.positive_token,
                    dimension.negative_token,
                    now
                ])?;
            }
        }
        tx.commit()?;
        Ok(batch_id)
    }

    /// Atomically assigns the oldest pending task (after returning lapsed
    /// leases to the queue).
    pub fn next_task(&self, annotator: &str) -> StoreResult<Option<AnnotationTask>> {
        let now = self.now_ms();
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        tx.execute(
            "UPDATE tasks SET state = 'pending', annotator = NULL, lease_expires_ms = NULL, updated_ms = ?1 \
             WHERE state = 'assigned' AND lease_expires_ms <= ?1",
            params![now],
        )?;
        let id: Option<i64> = tx
            .query_row("SELECT id FROM tasks WHERE state = 'pending' ORDER BY id LIMIT 1", [], |r| r.get(0))
            .optional()?;
        let Some(id) = id else {
            tx.commit()?;
            return Ok(None);
        };
        tx.execute(
            "UPDATE tasks SET state = 'assigned', annotator = ?2, lease_expires_ms = ?3, updated_ms = ?4 WHERE id = ?1",
            params![id, annotator, now + self.lease_ms, now],
        )?;
        let task = load_task(&tx, id, now)?;
        tx.commit()?;
        Ok(task)
    }

    pub fn submit_label(&self, task_id: i64, annotator: &str, label: Label) -> StoreResult<AnnotationTask> {
        let now = self.now_ms();
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let task = load_task(&tx, task_id, now)?.ok_or(StoreError::UnknownTask(task_id))?;
        match task.state {
            TaskState::Labeled => return Err(StoreError::AlreadyLabeled(task_id)),
            TaskState::Pending => return Err(StoreError::NotAssigned(task_id)),
            TaskState::Expired => {
                tx.execute(
                    "UPDATE tasks SET state = 'pending', annotator = NULL, lease_expires_ms = NULL, updated_ms = ?2 \
                     WHERE id = ?1",
                    params![task_id, now],
                )?;
                tx.commit()?;
                return Err(StoreError::LeaseExpired(task_id));
            }
            TaskState::Assigned => {}
        }
        if task.annotator.as_deref() != Some(annotator) {
            return Err(StoreError::WrongAnnotator { task: task_id });
        }
        tx.execute(
            "UPDATE tasks SET state = 'labeled', label = ?2, lease_expires_ms = NULL, updated_ms = ?3 WHERE id = ?1",
            params![task_id, label.is_positive() as i64, now],
        )?;
        let task = load_task(&tx, task_id, now)?.ok_or(StoreError::UnknownTask(task_id))?;
        tx.commit()?;
        Ok(task)
    }

    pub fn task(&self, task_id: i64) -> StoreResult<Option<AnnotationTask>> {
        let now = self.now_ms();
        let conn = self.conn.lock().unwrap();
        load_task(&conn, task_id, now)
    }

    pub fn batch_status(&self, batch_id: &str) -> StoreResult<BatchStatus> {
        let conn = self.conn.lock().unwrap();
        batch_status(&conn, batch_id)
    }

    /// Labeled tasks of a batch in enqueue order.
    pub fn batch_labels(&self, batch_id: &str) -> StoreResult<Vec<TaskLabel>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT post_id, dataset, text, label FROM tasks WHERE batch_id = ?1 AND state = 'labeled' ORDER BY id",
        )?;
        let rows = stmt.query_map(params![batch_id], |r| {
            Ok(TaskLabel {
                post_id: r.get(0)?,
                dataset: r.get(1)?,
                text: r.get(2)?,
                label: Label::from_bool(r.get::<_, i64>(3)? == 1),
            })
        })?;
        Ok(rows.collect::<Result<Vec<_>, _>>()?)
    }

    pub fn set_progress(&self, experiment: &str, progress: &Value) -> StoreResult<()> {
        let now = self.now_ms();
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO experiments (id, progress, updated_ms) VALUES (?1, ?2, ?3) \
             ON CONFLICT(id) DO UPDATE SET progress = excluded.progress, updated_ms = excluded.updated_ms",
            params![experiment, progress.to_string(), now],
        )?;
        Ok(())
    }

    pub fn experiment_status(&self, experiment: &str) -> StoreResult<ExperimentStatus> {
        let conn = self.conn.lock().unwrap();
        let ids: Vec<String> = {
            let mut stmt = conn.prepare("SELECT id FROM batches WHERE experiment = ?1 ORDER BY created_ms, rowid")?;
            let rows = stmt.query_map(params![experiment], |r| r.get(0))?;
            rows.collect::<Result<_, _>>()?
        };
        let progress: Option<String> = conn
            .query_row("SELECT progress FROM experiments WHERE id = ?1", params![experiment], |r| r.get(0))
            .optional()?;
        let batches = ids.iter().map(|id| batch_status(&conn, id)).collect::<StoreResult<Vec<_>>>()?;
        Ok(ExperimentStatus {
            experiment: experiment.to_string(),
            total: batches.iter().map(|b| b.total).sum(),
            labeled: batches.iter().map(|b| b.labeled).sum(),
            batches,
            progress: progress.and_then(|p| serde_json::from_str(&p).ok()),
        })
    }
}

fn load_task(conn: &Connection, id: i64, now: i64) -> StoreResult<Option<AnnotationTask>> {
    let sql = format!("SELECT {TASK_COLUMNS} FROM tasks WHERE id = ?1");
    Ok(conn
        .query_row(&sql, params![id], |r| {
            let state: String = r.get(9)?;
            let lease: Option<i64> = r.get(12)?;
            let state = match state.as_str() {
                "pending" => TaskState::Pending,
                "labeled" => TaskState::Labeled,
                _ if lease.is_some_and(|l| l <= now) => TaskState::Expired,
                _ => TaskState::Assigned,
            };
            Ok(AnnotationTask {
                task_id: r.get(0)?,
                batch_id: r.get(1)?,
                post_id: r.get(2)?,
                dataset: r.get(3)?,
                text: r.get(4)?,
                dimension: r.get(5)?,
                definition: r.get(6)?,
                positive_token: r.get(7)?,
                negative_token: r.get(8)?,
                state,
                label: r.get::<_, Option<i64>>(10)?.map(|l| Label::from_bool(l == 1)),
                annotator: r.get(11)?,
                lease_expires_ms: lease,
                created_ms: r.get(13)?,
                updated_ms: r.get(14)?,
            })
        })
        .optional()?)
}

fn batch_status(conn: &Connection, batch_id: &str) -> StoreResult<BatchStatus> {
    let (experiment, dimension, deadline_ms): (String, String, i64) = conn
        .query_row("SELECT experiment, dimension, deadline_ms FROM batches WHERE id = ?1", params![batch_id], |r| {
            Ok((r.get(0)?, r.get(1)?, r.get(2)?))
        })
        .optional()?
        .ok_or_else(|| StoreError::UnknownBatch(batch_id.to_string()))?;
    let (total, pending, assigned, labeled): (i64, i64, i64, i64) = conn.query_row(
        "SELECT COUNT(*), \
                COALESCE(SUM(state = 'pending'), 0), \
                COALESCE(SUM(state = 'assigned'), 0), \
                COALESCE(SUM(state = 'labeled'), 0) \
         FROM tasks WHERE batch_id = ?1",
        params![batch_id],
        |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
    )?;
    Ok(BatchStatus {
        batch_id: batch_id.to_string(),
        experiment,
        dimension,
        total: total as u64,
        pending: pending as u64,
        assigned: assigned as u64,
        labeled: labeled as u64,
        complete: total > 0 && labeled == total,
        deadline_ms,
    })
}

#[derive(Clone)]
struct AppState {
    store: Arc<TaskStore>,
    token: Option<Arc<str>>,
}

struct ApiError(StatusCode, String, &'static str);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "code": self.2}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e.status(), e.to_string(), e.code())
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> StoreResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), "internal"))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(app): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let annotator = q
        .annotator
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "annotator query parameter required".into(), "bad_request"))?;
    let store = app.store.clone();
    Ok(match blocking(move || store.next_task(&annotator)).await? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
struct LabelBody {
    annotator: String,
    label: Value,
}

/// 0/1, booleans, or the dimension's answer tokens (case-insensitive).
fn parse_submitted_label(value: &Value, task: &AnnotationTask) -> Option<Label> {
    match value {
        Value::Bool(b) => Some(Label::from_bool(*b)),
        Value::Number(n) if n.as_i64() == Some(1) => Some(Label::Positive),
        Value::Number(n) if n.as_i64() == Some(0) => Some(Label::Negative),
        Value::String(s) => {
            let s = s.trim();
            if s.eq_ignore_ascii_case(&task.positive_token) || s.eq_ignore_ascii_case("yes") || s == "1" {
                Some(Label::Positive)
            } else if s.eq_ignore_ascii_case(&task.negative_token) || s.eq_ignore_ascii_case("no") || s == "0" {
                Some(Label::Negative)
            } else {
                None
            }
        }
        _ => None,
    }
}

async fn submit_label(
    State(app): State<AppState>,
    UrlPath(task_id): UrlPath<i64>,
    Json(body): Json<LabelBody>,
) -> Result<Json<AnnotationTask>, ApiError> {
    let store = app.store.clone();
    let task = blocking(move || store.task(task_id)).await?.ok_or(StoreError::UnknownTask(task_id))?;
    let label = parse_submitted_label(&body.label, &task)
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("unrecognized label {}", body.label), "bad_request"))?;
    let store = app.store.clone();
    Ok(Json(blocking(move || store.submit_label(task_id, &body.annotator, label)).await?))
}

async fn batch(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<BatchStatus>, ApiError> {
    let store = app.store.clone();
    Ok(Json(blocking(move || store.batch_status(&id)).await?))
}

async fn experiment(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ExperimentStatus>, ApiError> {
    let store = app.store.clone();
    Ok(Json(blocking(move || store.experiment_status(&id)).await?))
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
        return Some(v);
    }
    headers.get("authorization").and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "))
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    match &app.token {
        Some(expected) if presented_token(req.headers()) != Some(&**expected) => {
            ApiError(StatusCode::UNAUTHORIZED, "missing or wrong token".into(), "unauthorized").into_response()
        }
        _ => next.run(req).await,
    }
}

/// The API router; `static_dir`, if given, is served for every other path.
pub fn router(store: Arc<TaskStore>, token: Option<String>, static_dir: Option<PathBuf>) -> Router {
    let state = AppState { store, token: token.map(Into::into) };
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/label", post(submit_label))
        .route("/api/batches/{id}", get(batch))
        .route("/api/experiments/{id}/status", get(experiment))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process is stopped.
pub fn serve_blocking(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("annotation server listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim() -> Dimension {
        atf_core::definitions::default_dimension("sexually_explicit").unwrap()
    }

    fn posts(n: usize) -> Vec<Post> {
        (0..n).map(|i| Post::new(format!("p{i}"), &format!("post number {i}"), "metoo").unwrap()).collect()
    }

    fn store() -> (TaskStore, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(1_000));
        (TaskStore::in_memory(clock.clone(), Duration::from_secs(60)).unwrap(), clock)
    }

    #[test]
    fn enqueue_and_conflicts() {
        let (s, _) = store();
        let batch = s.enqueue("e", &posts(100), &dim(), Duration::from_secs(3600)).unwrap();
        let st = s.batch_status(&batch).unwrap();
        assert_eq!((st.total, st.pending, st.labeled, st.complete), (100, 100, 0, false));
        assert!(matches!(s.enqueue("e", &posts(3), &dim(), Duration::ZERO), Err(StoreError::Conflict(ids)) if ids.len() == 3));
        assert!(matches!(s.enqueue("e", &[], &dim(), Duration::ZERO), Err(StoreError::EmptyBatch)));
        let dup = vec![posts(1)[0].clone(), posts(1)[0].clone()];
        let (s2, _) = store();
        assert!(matches!(s2.enqueue("e", &dup, &dim(), Duration::ZERO), Err(StoreError::Conflict(_))));
    }

    #[test]
    fn lifecycle_and_errors() {
        let (s, clock) = store();
        let batch = s.enqueue("e", &posts(2), &dim(), Duration::from_secs(3600)).unwrap();
        let t = s.next_task("ann").unwrap().unwrap();
        assert_eq!((t.state, t.post_id.as_str()), (TaskState::Assigned, "p0"));
        assert!(matches!(s.submit_label(t.task_id, "other", Label::Positive), Err(StoreError::WrongAnnotator { .. })));
        let done = s.submit_label(t.task_id, "ann", Label::Positive).unwrap();
        assert_eq!((done.state, done.label), (TaskState::Labeled, Some(Label::Positive)));
        assert!(matches!(s.submit_label(t.task_id, "ann", Label::Negative), Err(StoreError::AlreadyLabeled(_))));
        assert_eq!(s.task(t.task_id).unwrap().unwrap().label, Some(Label::Positive));
        assert_eq!(s.batch_status(&batch).unwrap().labeled, 1);

        let t2 = s.next_task("ann").unwrap().unwrap();
        assert!(s.next_task("ann").unwrap().is_none());
        clock.advance(Duration::from_secs(61));
        assert_eq!(s.task(t2.task_id).unwrap().unwrap().state, TaskState::Expired);
        assert!(matches!(s.submit_label(t2.task_id, "ann", Label::Negative), Err(StoreError::LeaseExpired(_))));
        assert_eq!(s.task(t2.task_id).unwrap().unwrap().state, TaskState::Pending);
        let again = s.next_task("late").unwrap().unwrap();
        assert_eq!(again.task_id, t2.task_id);
        s.submit_label(again.task_id, "late", Label::Negative).unwrap();
        let st = s.batch_status(&batch).unwrap();
        assert!(st.complete);
        let labels = s.batch_labels(&batch).unwrap();
        assert_eq!(labels.iter().map(|l| l.label).collect::<Vec<_>>(), vec![Label::Positive, Label::Negative]);
    }

    #[test]
    fn lapsed_lease_is_reassigned_on_poll() {
        let (s, clock) = store();
        s.enqueue("e", &posts(1), &dim(), Duration::from_secs(3600)).unwrap();
        let t = s.next_task("a").unwrap().unwrap();
        assert!(s.next_task("b").unwrap().is_none());
        clock.advance(Duration::from_secs(60));
        let t2 = s.next_task("b").unwrap().unwrap();
        assert_eq!((t2.task_id, t2.annotator.as_deref()), (t.task_id, Some("b")));
        assert!(matches!(s.submit_label(t.task_id, "a", Label::Positive), Err(StoreError::WrongAnnotator { .. })));
    }

    #[test]
    fn progress_and_experiment_status() {
        let (s, _) = store();
        let b = s.enqueue("exp1", &posts(3), &dim(), Duration::from_secs(10)).unwrap();
        s.set_progress("exp1", &json!({"repetition": 0, "budget": 100})).unwrap();
        let st = s.experiment_status("exp1").unwrap();
        assert_eq!((st.total, st.labeled, st.batches.len()), (3, 0, 1));
        assert_eq!(st.batches[0].batch_id, b);
        assert_eq!(st.progress, Some(json!({"repetition": 0, "budget": 100})));
        assert!(s.experiment_status("none").unwrap().batches.is_empty());
        assert!(matches!(s.batch_status("nope"), Err(StoreError::UnknownBatch(_))));
    }

    #[test]
    fn label_token_parsing() {
        let (s, _) = store();
        s.enqueue("e", &posts(1), &dim(), Duration::from_secs(10)).unwrap();
        let t = s.next_task("a").unwrap().unwrap();
        assert_eq!(parse_submitted_label(&json!("Yes"), &t), Some(Label::Positive));
        assert_eq!(parse_submitted_label(&json!("no"), &t), Some(Label::Negative));
        assert_eq!(parse_submitted_label(&json!(1), &t), Some(Label::Positive));
        assert_eq!(parse_submitted_label(&json!(false), &t), Some(Label::Negative));
        assert_eq!(parse_submitted_label(&json!("maybe"), &t), None);
        assert_eq!(parse_submitted_label(&json!(2), &t), None);
    }
}
