//! HTTP surface. Every route except `/storage/signed/{token}` requires an
//! `Authorization: Bearer <key>` header; every non-2xx body is an
//! [`ErrorEnvelope`].

mod error;

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Extension, Json, Router};
use schema_core::{ExecutionKind, ExecutionStatus, TaskRequest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use crate::directory::Caller;
use crate::executions::{ListFilter, LogChannel};
use crate::experiments::{ExperimentPatch, NewExperiment};
use crate::files::{SignedLink, StoredObject};
use crate::paging::PageRequest;
use crate::services::Services;

pub use error::{ApiError, ErrorEnvelope};

/// Upper bound on bodies sent through signed upload links.
pub const MAX_UPLOAD_BYTES: usize = 1 << 30;

type AppState = Arc<Services>;
type ApiResult<T> = Result<T, ApiError>;
type Params = Result<Query<HashMap<String, String>>, QueryRejection>;
type Body = Result<Bytes, BytesRejection>;

pub fn router(services: Arc<Services>) -> Router {
    let authed = Router::new()
        .route("/api/tasks", post(submit_task).get(list_tasks))
        .route("/api/tasks/{uuid}", get(get_task))
        .route("/api/tasks/{uuid}/cancel", post(cancel_task))
        .route("/api/tasks/{uuid}/stdout", get(task_stdout))
        .route("/api/tasks/{uuid}/stderr", get(task_stderr))
        .route("/api/quotas", get(quotas))
        .route("/api/workflows", post(submit_workflow).get(list_workflows))
        .route("/api/workflows/{uuid}", get(get_workflow))
        .route("/api/workflows/{uuid}/cancel", post(cancel_workflow))
        .route("/api/workflows/{uuid}/stdout", get(workflow_stdout))
        .route("/api/workflows/{uuid}/stderr", get(workflow_stderr))
        .route("/reproducibility/experiments", get(list_experiments).post(create_experiment))
        .route(
            "/reproducibility/experiments/{username}/{name}",
            get(get_experiment).patch(update_experiment).delete(delete_experiment),
        )
        .route(
            "/reproducibility/experiments/{username}/{name}/tasks",
            get(experiment_tasks).put(assign_tasks),
        )
        .route("/storage/files", get(list_files).post(upload_link))
        .route(
            "/storage/files/{*path}",
            get(download_link).patch(move_file).delete(delete_file),
        )
        .route_layer(middleware::from_fn_with_state(services.clone(), authenticate));

    let signed = Router::new()
        .route("/storage/signed/{token}", put(signed_upload).get(signed_download))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES));

    authed
        .merge(signed)
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route")
        })
        .with_state(services)
}

async fn authenticate(State(svc): State<AppState>, mut req: Request, next: Next) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    let Some(token) = token else {
        return ApiError::unauthorized().into_response();
    };
    let caller = blocking(move || Ok(svc.directory.authenticate(&token))).await;
    match caller {
        Ok(Some(caller)) => {
            req.extensions_mut().insert(caller);
            next.run(req).await
        }
        Ok(None) => ApiError::unauthorized().into_response(),
        Err(e) => e.into_response(),
    }
}

/// Runs synchronous manager code off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("handler panicked: {e}"))))
}

fn parse_body<T: DeserializeOwned>(body: Body) -> ApiResult<T> {
    let bytes = body.map_err(|e| ApiError::new(e.status(), "bad_body", e.body_text()))?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request("malformed_json", e.to_string()))
}

fn params(q: Params) -> ApiResult<HashMap<String, String>> {
    q.map(|Query(m)| m)
        .map_err(|e| ApiError::bad_request("bad_query", e.body_text()))
}

fn page_of(q: &HashMap<String, String>) -> ApiResult<PageRequest> {
    let num = |k: &str| -> ApiResult<Option<u32>> {
        q.get(k)
            .map(|v| v.parse::<u32>())
            .transpose()
            .map_err(|_| ApiError::bad_request("invalid_page", format!("{k} must be a positive integer")))
    };
    Ok(PageRequest::new(num("page")?, num("page_size")?)?)
}

fn status_of(q: &HashMap<String, String>) -> ApiResult<Option<ExecutionStatus>> {
    q.get("status")
        .map(|s| {
            serde_json::from_value(json!(s.to_ascii_uppercase()))
                .map_err(|_| ApiError::bad_request("invalid_status", format!("unknown status {s:?}")))
        })
        .transpose()
}

fn uuid_of(p: Result<Path<String>, PathRejection>) -> ApiResult<Uuid> {
    let Path(raw) = p.map_err(|e| ApiError::bad_request("bad_path", e.body_text()))?;
    Uuid::parse_str(&raw).map_err(|_| ApiError::not_found(format!("execution {raw} not found")))
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

// executions

async fn submit_task(State(svc): State<AppState>, Extension(caller): Extension<Caller>, body: Body) -> ApiResult<Response> {
    let req: TaskRequest = parse_body(body)?;
    let rec = blocking(move || Ok(svc.executions.submit_task(&caller, req)?)).await?;
    Ok(created(rec))
}

async fn submit_workflow(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    body: Body,
) -> ApiResult<Response> {
    let bytes = body.map_err(|e| ApiError::new(e.status(), "bad_body", e.body_text()))?;
    let doc = String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("malformed_json", "body is not UTF-8"))?;
    let rec = blocking(move || Ok(svc.executions.submit_workflow(&caller, &doc)?)).await?;
    Ok(created(rec))
}

async fn list_kind(svc: AppState, caller: Caller, q: Params, kind: ExecutionKind) -> ApiResult<Response> {
    let q = params(q)?;
    let page = page_of(&q)?;
    let filter = ListFilter {
        status: status_of(&q)?,
        kind: Some(kind),
    };
    let page = blocking(move || Ok(svc.executions.list(&caller, filter, page)?)).await?;
    Ok(Json(page).into_response())
}

async fn get_kind(svc: AppState, caller: Caller, uuid: Uuid, kind: ExecutionKind) -> ApiResult<Response> {
    let rec = blocking(move || Ok(svc.executions.get(&caller, uuid, Some(kind))?)).await?;
    Ok(Json(rec).into_response())
}

async fn cancel_kind(svc: AppState, caller: Caller, uuid: Uuid, kind: ExecutionKind) -> ApiResult<Response> {
    let out = blocking(move || Ok(svc.executions.cancel(&caller, uuid, Some(kind))?)).await?;
    Ok(Json(out).into_response())
}

async fn logs_kind(
    svc: AppState,
    caller: Caller,
    uuid: Uuid,
    kind: ExecutionKind,
    channel: LogChannel,
) -> ApiResult<Response> {
    let logs = blocking(move || Ok(svc.executions.logs(&caller, uuid, Some(kind), channel)?)).await?;
    Ok(Json(logs).into_response())
}

macro_rules! execution_routes {
    ($kind:expr, $list:ident, $get:ident, $cancel:ident, $stdout:ident, $stderr:ident) => {
        async fn $list(State(svc): State<AppState>, Extension(c): Extension<Caller>, q: Params) -> ApiResult<Response> {
            list_kind(svc, c, q, $kind).await
        }
        async fn $get(
            State(svc): State<AppState>,
            Extension(c): Extension<Caller>,
            p: Result<Path<String>, PathRejection>,
        ) -> ApiResult<Response> {
            get_kind(svc, c, uuid_of(p)?, $kind).await
        }
        async fn $cancel(
            State(svc): State<AppState>,
            Extension(c): Extension<Caller>,
            p: Result<Path<String>, PathRejection>,
        ) -> ApiResult<Response> {
            cancel_kind(svc, c, uuid_of(p)?, $kind).await
        }
        async fn $stdout(
            State(svc): State<AppState>,
            Extension(c): Extension<Caller>,
            p: Result<Path<String>, PathRejection>,
        ) -> ApiResult<Response> {
            logs_kind(svc, c, uuid_of(p)?, $kind, LogChannel::Stdout).await
        }
        async fn $stderr(
            State(svc): State<AppState>,
            Extension(c): Extension<Caller>,
            p: Result<Path<String>, PathRejection>,
        ) -> ApiResult<Response> {
            logs_kind(svc, c, uuid_of(p)?, $kind, LogChannel::Stderr).await
        }
    };
}

execution_routes!(ExecutionKind::Task, list_tasks, get_task, cancel_task, task_stdout, task_stderr);
execution_routes!(
    ExecutionKind::Workflow,
    list_workflows,
    get_workflow,
    cancel_workflow,
    workflow_stdout,
    workflow_stderr
);

async fn quotas(State(svc): State<AppState>, Extension(caller): Extension<Caller>) -> ApiResult<Response> {
    let report = blocking(move || Ok(svc.quotas.get_quotas(&caller.user, &caller.context)?)).await?;
    Ok(Json(report).into_response())
}

// experiments

type ExpPath = Result<Path<(String, String)>, PathRejection>;

fn exp_path(p: ExpPath) -> ApiResult<(String, String)> {
    p.map(|Path(v)| v)
        .map_err(|e| ApiError::bad_request("bad_path", e.body_text()))
}

async fn list_experiments(State(svc): State<AppState>, Extension(caller): Extension<Caller>, q: Params) -> ApiResult<Response> {
    let page = page_of(&params(q)?)?;
    let page = blocking(move || Ok(svc.experiments.list(&caller, page)?)).await?;
    Ok(Json(page).into_response())
}

async fn create_experiment(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    body: Body,
) -> ApiResult<Response> {
    let req: NewExperiment = parse_body(body)?;
    let exp = blocking(move || Ok(svc.experiments.create(&caller, req)?)).await?;
    Ok(created(exp))
}

async fn get_experiment(State(svc): State<AppState>, Extension(caller): Extension<Caller>, p: ExpPath) -> ApiResult<Response> {
    let (owner, name) = exp_path(p)?;
    let view = blocking(move || Ok(svc.experiments.get(&caller, &owner, &name)?)).await?;
    Ok(Json(view).into_response())
}

async fn update_experiment(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    p: ExpPath,
    body: Body,
) -> ApiResult<Response> {
    let (owner, name) = exp_path(p)?;
    let patch: ExperimentPatch = parse_body(body)?;
    let exp = blocking(move || Ok(svc.experiments.update(&caller, &owner, &name, patch)?)).await?;
    Ok(Json(exp).into_response())
}

async fn delete_experiment(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    p: ExpPath,
) -> ApiResult<Response> {
    let (owner, name) = exp_path(p)?;
    let key = format!("{owner}/{name}");
    blocking(move || Ok(svc.experiments.delete(&caller, &owner, &name)?)).await?;
    Ok(Json(json!({ "deleted": key })).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskList {
    pub tasks: Vec<Uuid>,
}

/// Accepts either `{"tasks": [..]}` or a bare array.
#[derive(Deserialize)]
#[serde(untagged)]
enum AssignBody {
    Wrapped(TaskList),
    Bare(Vec<Uuid>),
}

async fn experiment_tasks(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    p: ExpPath,
) -> ApiResult<Response> {
    let (owner, name) = exp_path(p)?;
    let tasks = blocking(move || Ok(svc.experiments.tasks(&caller, &owner, &name)?)).await?;
    Ok(Json(TaskList { tasks }).into_response())
}

async fn assign_tasks(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    p: ExpPath,
    body: Body,
) -> ApiResult<Response> {
    let (owner, name) = exp_path(p)?;
    let tasks = match parse_body::<AssignBody>(body)? {
        AssignBody::Wrapped(t) => t.tasks,
        AssignBody::Bare(t) => t,
    };
    let exp = blocking(move || Ok(svc.experiments.assign(&caller, &owner, &name, &tasks)?)).await?;
    Ok(Json(exp).into_response())
}

// storage

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkRequest {
    pub key: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkResponse {
    pub key: String,
    pub link: SignedLink,
    /// Present on download links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<StoredObject>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MoveRequest {
    pub to: String,
    #[serde(default)]
    pub overwrite: bool,
}

type KeyPath = Result<Path<String>, PathRejection>;

fn key_of(p: KeyPath) -> ApiResult<String> {
    p.map(|Path(k)| k)
        .map_err(|e| ApiError::bad_request("bad_path", e.body_text()))
}

async fn list_files(State(svc): State<AppState>, Extension(caller): Extension<Caller>, q: Params) -> ApiResult<Response> {
    let q = params(q)?;
    let page = page_of(&q)?;
    let prefix = q.get("prefix").cloned();
    let objects = blocking(move || Ok(svc.files.list_objects(&caller.user, prefix.as_deref())?)).await?;
    Ok(Json(page.apply(objects)).into_response())
}

async fn upload_link(State(svc): State<AppState>, Extension(caller): Extension<Caller>, body: Body) -> ApiResult<Response> {
    let LinkRequest { key } = parse_body(body)?;
    let resp = blocking(move || {
        let link = svc.files.issue_upload_link(&caller.user, &key)?;
        Ok(LinkResponse { key, link, object: None })
    })
    .await?;
    Ok(created(resp))
}

async fn download_link(State(svc): State<AppState>, Extension(caller): Extension<Caller>, p: KeyPath) -> ApiResult<Response> {
    let key = key_of(p)?;
    let resp = blocking(move || {
        let (link, object) = svc.files.issue_download_link(&caller.user, &key)?;
        Ok(LinkResponse {
            key,
            link,
            object: Some(object),
        })
    })
    .await?;
    Ok(Json(resp).into_response())
}

async fn move_file(
    State(svc): State<AppState>,
    Extension(caller): Extension<Caller>,
    p: KeyPath,
    body: Body,
) -> ApiResult<Response> {
    let from = key_of(p)?;
    let MoveRequest { to, overwrite } = parse_body(body)?;
    let obj = blocking(move || Ok(svc.files.move_object(&caller.user, &from, &to, overwrite)?)).await?;
    Ok(Json(obj).into_response())
}

async fn delete_file(State(svc): State<AppState>, Extension(caller): Extension<Caller>, p: KeyPath) -> ApiResult<Response> {
    let key = key_of(p)?;
    let k = key.clone();
    blocking(move || Ok(svc.files.delete_object(&caller.user, &k)?)).await?;
    Ok(Json(json!({ "deleted": key })).into_response())
}

async fn signed_upload(State(svc): State<AppState>, p: KeyPath, body: Body) -> ApiResult<Response> {
    let token = key_of(p)?;
    let bytes = body.map_err(|e| ApiError::new(e.status(), "bad_body", e.body_text()))?;
    let obj = blocking(move || Ok(svc.files.signed_upload(&token, &bytes)?)).await?;
    Ok(Json(obj).into_response())
}

async fn signed_download(State(svc): State<AppState>, p: KeyPath) -> ApiResult<Response> {
    let token = key_of(p)?;
    let data = blocking(move || Ok(svc.files.signed_download(&token)?)).await?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, "application/octet-stream".parse().expect("static header"));
    Ok((headers, data).into_response())
}
