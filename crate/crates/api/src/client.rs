//! Blocking HTTP client for the service API.

use std::io::Read;
use std::time::Duration;

use schema_core::{ExecutionKind, ExecutionRecord, ExecutionSummary, Experiment, TaskRequest};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::executions::{CancelOutcome, LogChannel};
use crate::experiments::{ExperimentPatch, ExperimentView, NewExperiment};
use crate::files::StoredObject;
use crate::paging::Page;
use crate::quotas::QuotaReport;
use crate::rest::{ErrorEnvelope, LinkResponse, TaskList};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{} {}: {}", .0.status_code, .0.code, .0.message)]
    Api(ErrorEnvelope),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api(e) => Some(e.status_code),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

fn kind_root(kind: ExecutionKind) -> &'static str {
    match kind {
        ExecutionKind::Task => "/api/tasks",
        ExecutionKind::Workflow => "/api/workflows",
    }
}

fn encode_segment(s: &str) -> String {
    percent_encoding::utf8_percent_encode(s, percent_encoding::NON_ALPHANUMERIC).to_string()
}

/// Keys keep their `/` separators in storage paths.
fn encode_key(key: &str) -> String {
    key.split('/').map(encode_segment).collect::<Vec<_>>().join("/")
}

pub struct Client {
    base: String,
    token: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: impl Into<String>, token: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            token: token.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }

    fn read(resp: Result<ureq::Response, ureq::Error>) -> ClientResult<Value> {
        match resp {
            Ok(r) => {
                let text = r.into_string().map_err(|e| ClientError::Decode(e.to_string()))?;
                if text.is_empty() {
                    return Ok(Value::Null);
                }
                serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
            }
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let env = serde_json::from_str::<ErrorEnvelope>(&text).unwrap_or(ErrorEnvelope {
                    status_code: code,
                    code: "unknown".into(),
                    message: text,
                    details: None,
                });
                Err(ClientError::Api(env))
            }
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    /// One authenticated request; returns the raw JSON body.
    pub fn raw(&self, method: &str, path: &str, body: Option<&Value>) -> ClientResult<Value> {
        let req = self
            .agent
            .request(method, &format!("{}{}", self.base, path))
            .set("Authorization", &format!("Bearer {}", self.token));
        Self::read(match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        })
    }

    fn call<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&Value>) -> ClientResult<T> {
        let v = self.raw(method, path, body)?;
        serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn body<T: Serialize>(v: &T) -> Value {
        serde_json::to_value(v).expect("serializable request")
    }

    // executions

    pub fn submit_task(&self, req: &TaskRequest) -> ClientResult<ExecutionRecord> {
        self.call("POST", "/api/tasks", Some(&Self::body(req)))
    }

    /// Submits a workflow document as is.
    pub fn submit_workflow(&self, doc: &Value) -> ClientResult<ExecutionRecord> {
        self.call("POST", "/api/workflows", Some(doc))
    }

    pub fn list(
        &self,
        kind: ExecutionKind,
        status: Option<&str>,
        page: Option<u32>,
        page_size: Option<u32>,
    ) -> ClientResult<Page<ExecutionSummary>> {
        let mut q = Vec::new();
        if let Some(s) = status {
            q.push(format!("status={}", encode_segment(s)));
        }
        if let Some(p) = page {
            q.push(format!("page={p}"));
        }
        if let Some(p) = page_size {
            q.push(format!("page_size={p}"));
        }
        let query = if q.is_empty() { String::new() } else { format!("?{}", q.join("&")) };
        self.call("GET", &format!("{}{query}", kind_root(kind)), None)
    }

    pub fn get(&self, kind: ExecutionKind, uuid: Uuid) -> ClientResult<ExecutionRecord> {
        self.call("GET", &format!("{}/{uuid}", kind_root(kind)), None)
    }

    /// Looks the uuid up as a task, then as a workflow.
    pub fn find(&self, uuid: Uuid) -> ClientResult<ExecutionRecord> {
        match self.get(ExecutionKind::Task, uuid) {
            Err(ClientError::Api(e)) if e.status_code == 404 => self.get(ExecutionKind::Workflow, uuid),
            other => other,
        }
    }

    pub fn logs(&self, kind: ExecutionKind, uuid: Uuid, channel: LogChannel) -> ClientResult<Vec<String>> {
        let ch = match channel {
            LogChannel::Stdout => "stdout",
            LogChannel::Stderr => "stderr",
        };
        self.call("GET", &format!("{}/{uuid}/{ch}", kind_root(kind)), None)
    }

    pub fn cancel(&self, kind: ExecutionKind, uuid: Uuid) -> ClientResult<CancelOutcome> {
        self.call("POST", &format!("{}/{uuid}/cancel", kind_root(kind)), None)
    }

    pub fn quotas(&self) -> ClientResult<QuotaReport> {
        self.call("GET", "/api/quotas", None)
    }

    // experiments

    pub fn create_experiment(&self, req: &NewExperiment) -> ClientResult<Experiment> {
        self.call("POST", "/reproducibility/experiments", Some(&Self::body(req)))
    }

    pub fn list_experiments(&self) -> ClientResult<Page<Experiment>> {
        self.call("GET", "/reproducibility/experiments", None)
    }

    fn exp_path(owner: &str, name: &str) -> String {
        format!("/reproducibility/experiments/{}/{}", encode_segment(owner), encode_segment(name))
    }

    pub fn get_experiment(&self, owner: &str, name: &str) -> ClientResult<ExperimentView> {
        self.call("GET", &Self::exp_path(owner, name), None)
    }

    pub fn update_experiment(&self, owner: &str, name: &str, patch: &ExperimentPatch) -> ClientResult<Experiment> {
        self.call("PATCH", &Self::exp_path(owner, name), Some(&Self::body(patch)))
    }

    pub fn delete_experiment(&self, owner: &str, name: &str) -> ClientResult<Value> {
        self.raw("DELETE", &Self::exp_path(owner, name), None)
    }

    pub fn assign(&self, owner: &str, name: &str, tasks: &[Uuid]) -> ClientResult<Experiment> {
        let path = format!("{}/tasks", Self::exp_path(owner, name));
        self.call("PUT", &path, Some(&json!({ "tasks": tasks })))
    }

    pub fn experiment_tasks(&self, owner: &str, name: &str) -> ClientResult<Vec<Uuid>> {
        let path = format!("{}/tasks", Self::exp_path(owner, name));
        Ok(self.call::<TaskList>("GET", &path, None)?.tasks)
    }

    // storage

    pub fn list_files(&self, prefix: Option<&str>) -> ClientResult<Page<StoredObject>> {
        let path = match prefix {
            Some(p) => format!("/storage/files?page_size=100&prefix={}", encode_segment(p)),
            None => "/storage/files?page_size=100".to_string(),
        };
        self.call("GET", &path, None)
    }

    pub fn upload_link(&self, key: &str) -> ClientResult<LinkResponse> {
        self.call("POST", "/storage/files", Some(&json!({ "key": key })))
    }

    pub fn download_link(&self, key: &str) -> ClientResult<LinkResponse> {
        self.call("GET", &format!("/storage/files/{}", encode_key(key)), None)
    }

    pub fn move_file(&self, from: &str, to: &str, overwrite: bool) -> ClientResult<StoredObject> {
        let body = json!({ "to": to, "overwrite": overwrite });
        self.call("PATCH", &format!("/storage/files/{}", encode_key(from)), Some(&body))
    }

    pub fn delete_file(&self, key: &str) -> ClientResult<Value> {
        self.raw("DELETE", &format!("/storage/files/{}", encode_key(key)), None)
    }

    /// Requests an upload link and sends `data` through it.
    pub fn upload(&self, key: &str, data: &[u8]) -> ClientResult<()> {
        let link = self.upload_link(key)?.link;
        self.agent
            .put(&link.url)
            .send_bytes(data)
            .map(|_| ())
            .map_err(|e| match e {
                ureq::Error::Status(..) => Self::read(Err(e)).unwrap_err(),
                other => ClientError::Transport(other.to_string()),
            })
    }

    /// Requests a download link and fetches the object through it.
    pub fn download(&self, key: &str) -> ClientResult<Vec<u8>> {
        let link = self.download_link(key)?.link;
        let resp = match self.agent.get(&link.url).call() {
            Ok(r) => r,
            Err(e @ ureq::Error::Status(..)) => return Err(Self::read(Err(e)).unwrap_err()),
            Err(e) => return Err(ClientError::Transport(e.to_string())),
        };
        let mut buf = Vec::new();
        resp.into_reader()
            .take(crate::rest::MAX_UPLOAD_BYTES as u64)
            .read_to_end(&mut buf)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(buf)
    }
}
