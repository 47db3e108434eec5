//! In-memory TES server for integration tests and offline demos.
//!
//! Tasks advance QUEUED → RUNNING → terminal on a timer measured from
//! creation. The terminal state is fixed at creation from the fault switches.
//! Each finished executor gets one log entry; an `echo` executor reports its
//! arguments as stdout.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use schema_core::JobState;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::{TesExecutorLog, TesTask, TesTaskLog};

#[derive(Clone, Debug)]
pub struct MockTesConfig {
    pub queued_for: Duration,
    pub run_for: Duration,
    /// Bearer token required on every request, if set.
    pub token: Option<String>,
}

impl Default for MockTesConfig {
    fn default() -> Self {
        MockTesConfig {
            queued_for: Duration::from_millis(50),
            run_for: Duration::from_millis(100),
            token: None,
        }
    }
}

/// Fault-injection switches, flipped by tests at any time.
#[derive(Debug, Default)]
pub struct Faults {
    pub reject_submissions: AtomicBool,
    /// Tasks created while set end in SYSTEM_ERROR.
    pub system_error: AtomicBool,
    /// Tasks created while set end in EXECUTOR_ERROR on their first executor.
    pub executor_error: AtomicBool,
    /// Requests are answered by closing the connection.
    pub drop_connections: AtomicBool,
}

struct MockTask {
    doc: TesTask,
    created: Instant,
    outcome: JobState,
    canceled: bool,
    cancel_calls: u32,
}

impl MockTask {
    fn state(&self, cfg: &MockTesConfig, now: Instant) -> JobState {
        if self.canceled {
            return JobState::Canceled;
        }
        let age = now.duration_since(self.created);
        if age < cfg.queued_for {
            JobState::Queued
        } else if age < cfg.queued_for + cfg.run_for {
            JobState::Running
        } else {
            self.outcome
        }
    }

    fn view(&self, id: &str, cfg: &MockTesConfig, full: bool) -> TesTask {
        let state = self.state(cfg, Instant::now());
        if !full {
            return TesTask {
                id: Some(id.to_string()),
                state: Some(state.as_str().to_string()),
                ..TesTask::default()
            };
        }
        let mut doc = self.doc.clone();
        doc.id = Some(id.to_string());
        doc.state = Some(state.as_str().to_string());
        let mut log = TesTaskLog::default();
        match state {
            JobState::Complete => {
                log.logs = doc.executors.iter().map(|e| executor_log(&e.command, 0)).collect();
            }
            JobState::ExecutorError => {
                if let Some(e) = doc.executors.first() {
                    log.logs.push(TesExecutorLog {
                        stderr: Some("mock: injected executor failure\n".into()),
                        ..executor_log(&e.command, 1)
                    });
                }
            }
            JobState::SystemError => log.system_logs.push("mock: injected system error".into()),
            _ => {}
        }
        doc.logs = vec![log];
        doc
    }
}

fn executor_log(command: &[String], exit_code: i32) -> TesExecutorLog {
    let stdout = match command.split_first() {
        Some((prog, args)) if prog == "echo" => format!("{}\n", args.join(" ")),
        _ => String::new(),
    };
    TesExecutorLog {
        stdout: Some(stdout),
        stderr: Some(String::new()),
        exit_code,
        ..TesExecutorLog::default()
    }
}

struct Shared {
    cfg: MockTesConfig,
    faults: Arc<Faults>,
    tasks: Mutex<HashMap<String, MockTask>>,
    next: AtomicU64,
}

type AppState = Arc<Shared>;

fn tes_error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "msg": msg.into(), "status_code": status.as_u16() }))).into_response()
}

/// Closes the connection without answering.
fn drop_if_faulted(s: &Shared) {
    if s.faults.drop_connections.load(Ordering::SeqCst) {
        std::panic::resume_unwind(Box::new("mock TES dropped the connection"));
    }
}

fn authorized(s: &Shared, headers: &HeaderMap) -> bool {
    match &s.cfg.token {
        None => true,
        Some(t) => headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            == Some(t.as_str()),
    }
}

async fn create(State(s): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> Response {
    drop_if_faulted(&s);
    if !authorized(&s, &headers) {
        return tes_error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    if s.faults.reject_submissions.load(Ordering::SeqCst) {
        return tes_error(StatusCode::BAD_REQUEST, "mock: submissions are being rejected");
    }
    let doc: TesTask = match serde_json::from_slice(&body) {
        Ok(d) => d,
        Err(e) => return tes_error(StatusCode::BAD_REQUEST, format!("invalid task document: {e}")),
    };
    if doc.executors.is_empty() {
        return tes_error(StatusCode::BAD_REQUEST, "task has no executors");
    }
    let outcome = if s.faults.system_error.load(Ordering::SeqCst) {
        JobState::SystemError
    } else if s.faults.executor_error.load(Ordering::SeqCst) {
        JobState::ExecutorError
    } else {
        JobState::Complete
    };
    let id = format!("tes-{:06}", s.next.fetch_add(1, Ordering::SeqCst));
    s.tasks.lock().insert(
        id.clone(),
        MockTask {
            doc,
            created: Instant::now(),
            outcome,
            canceled: false,
            cancel_calls: 0,
        },
    );
    Json(json!({ "id": id })).into_response()
}

#[derive(Deserialize)]
struct ViewQuery {
    view: Option<String>,
}

async fn get_task(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> Response {
    drop_if_faulted(&s);
    if !authorized(&s, &headers) {
        return tes_error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    let full = matches!(q.view.as_deref(), Some("FULL") | Some("BASIC"));
    match s.tasks.lock().get(&id) {
        Some(t) => Json(t.view(&id, &s.cfg, full)).into_response(),
        None => tes_error(StatusCode::NOT_FOUND, format!("task {id} not found")),
    }
}

/// Takes the (ignored) body so the server does not close a keep-alive
/// connection the client has already returned to its pool.
async fn cancel_task(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(action): Path<String>,
    _body: axum::body::Bytes,
) -> Response {
    drop_if_faulted(&s);
    if !authorized(&s, &headers) {
        return tes_error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
    }
    let Some(id) = action.strip_suffix(":cancel") else {
        return tes_error(StatusCode::NOT_FOUND, "unknown task action");
    };
    let mut tasks = s.tasks.lock();
    let Some(t) = tasks.get_mut(id) else {
        return tes_error(StatusCode::NOT_FOUND, format!("task {id} not found"));
    };
    t.cancel_calls += 1;
    if !t.state(&s.cfg, Instant::now()).is_terminal() {
        t.canceled = true;
    }
    Json(json!({})).into_response()
}

async fn service_info() -> Json<serde_json::Value> {
    Json(json!({
        "id": "mock-tes",
        "name": "mock TES",
        "type": { "group": "org.ga4gh", "artifact": "tes", "version": "1.1.0" },
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn router(shared: AppState) -> Router {
    Router::new()
        .route("/ga4gh/tes/v1/service-info", get(service_info))
        .route("/ga4gh/tes/v1/tasks", post(create))
        .route("/ga4gh/tes/v1/tasks/{id}", get(get_task).post(cancel_task))
        .with_state(shared)
}

/// Running mock server; shut down on drop.
pub struct MockTes {
    addr: SocketAddr,
    shared: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl MockTes {
    pub fn start(cfg: MockTesConfig) -> std::io::Result<Self> {
        Self::start_on("127.0.0.1:0", cfg)
    }

    pub fn start_on(addr: &str, cfg: MockTesConfig) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            cfg,
            faults: Arc::new(Faults::default()),
            tasks: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
        });
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(shared.clone());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = thread::Builder::new().name("mock-tes".into()).spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(MockTes {
            addr,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn faults(&self) -> &Faults {
        &self.shared.faults
    }

    /// The document as the server parsed it at creation.
    pub fn received(&self, id: &str) -> Option<TesTask> {
        self.shared.tasks.lock().get(id).map(|t| t.doc.clone())
    }

    pub fn task_count(&self) -> usize {
        self.shared.tasks.lock().len()
    }

    pub fn cancel_calls(&self, id: &str) -> u32 {
        self.shared.tasks.lock().get(id).map_or(0, |t| t.cancel_calls)
    }

    /// Blocks the calling thread until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockTes {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
