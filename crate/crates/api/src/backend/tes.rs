//! GA4GH TES v1 wire types and a client for the create/get/cancel subset.

use std::collections::BTreeMap;
use std::time::Duration;

use schema_core::{Executor, JobState, MountPoint, Resources, Task, TaskRequest, Volume};
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendJob, BackendResult, ExecutionBackend, JobSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TesTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<TesInput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<TesOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<TesResources>,
    pub executors: Vec<TesExecutor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volumes: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logs: Vec<TesTaskLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creation_time: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub path: String,
    #[serde(rename = "type", default = "file_type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesOutput {
    pub url: String,
    pub path: String,
    #[serde(rename = "type", default = "file_type")]
    pub kind: String,
}

fn file_type() -> String {
    "FILE".to_string()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TesResources {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_cores: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ram_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disk_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preemptible: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesExecutor {
    pub image: String,
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TesTaskLog {
    #[serde(default)]
    pub logs: Vec<TesExecutorLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub system_logs: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TesExecutorLog {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    pub exit_code: i32,
}

/// TES task state name to job state. TES states without a counterpart fold
/// into the nearest one: UNKNOWN and INITIALIZING wait like QUEUED, PAUSED
/// still occupies resources like RUNNING, PREEMPTED is a system failure.
pub fn tes_state(s: &str) -> Option<JobState> {
    Some(match s {
        "UNKNOWN" | "QUEUED" | "INITIALIZING" => JobState::Queued,
        "RUNNING" | "PAUSED" => JobState::Running,
        "COMPLETE" => JobState::Complete,
        "EXECUTOR_ERROR" => JobState::ExecutorError,
        "SYSTEM_ERROR" | "PREEMPTED" => JobState::SystemError,
        "CANCELED" | "CANCELING" => JobState::Canceled,
        _ => return None,
    })
}

pub(crate) fn tes_document(job: &JobSpec) -> TesTask {
    TesTask {
        name: job.name.clone(),
        inputs: job
            .inputs
            .iter()
            .map(|m| TesInput {
                url: Some(m.url.clone()),
                path: m.path.clone(),
                kind: file_type(),
                content: None,
            })
            .collect(),
        outputs: job
            .outputs
            .iter()
            .map(|m| TesOutput {
                url: m.url.clone(),
                path: m.path.clone(),
                kind: file_type(),
            })
            .collect(),
        resources: Some(TesResources {
            cpu_cores: Some(job.resources.cpu_cores),
            ram_gb: Some(job.resources.ram_gb),
            disk_gb: Some(job.resources.disk_gb),
            preemptible: None,
        }),
        executors: job
            .executors
            .iter()
            .map(|e| TesExecutor {
                image: e.image.clone(),
                command: e.command.clone(),
                workdir: e.workdir.clone(),
                env: e.env.clone(),
            })
            .collect(),
        volumes: job.volumes.iter().map(|v| v.path.clone()).collect(),
        tags: BTreeMap::from([("workspace".to_string(), job.workspace.clone())]),
        ..TesTask::default()
    }
}

pub fn tes_serialize(task: &Task) -> TesTask {
    tes_document(&JobSpec::from_task(task))
}

/// Inverse of [`tes_serialize`] on the mapped fields.
pub fn tes_deserialize(doc: &TesTask) -> TaskRequest {
    let defaults = Resources::default();
    let res = doc.resources.clone().unwrap_or_default();
    TaskRequest {
        name: doc.name.clone(),
        executors: doc
            .executors
            .iter()
            .map(|e| Executor {
                image: e.image.clone(),
                command: e.command.clone(),
                env: e.env.clone(),
                workdir: e.workdir.clone(),
            })
            .collect(),
        inputs: doc
            .inputs
            .iter()
            .map(|i| MountPoint::input(i.url.clone().unwrap_or_default(), i.path.clone()))
            .collect(),
        outputs: doc
            .outputs
            .iter()
            .map(|o| MountPoint::output(o.url.clone(), o.path.clone()))
            .collect(),
        volumes: doc.volumes.iter().map(Volume::new).collect(),
        resources: Resources {
            cpu_cores: res.cpu_cores.unwrap_or(defaults.cpu_cores),
            ram_gb: res.ram_gb.unwrap_or(defaults.ram_gb),
            disk_gb: res.disk_gb.unwrap_or(defaults.disk_gb),
        },
    }
}

pub struct TesClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CreateResponse {
    id: String,
}

fn unavailable(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Status(code, resp) => {
            BackendError::BackendUnavailable(format!("TES status {code}: {}", resp.into_string().unwrap_or_default().trim()))
        }
        ureq::Error::Transport(t) => BackendError::BackendUnavailable(t.to_string()),
    }
}

impl TesClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        TesClient {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(5))
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    fn request(&self, method: &str, path: &str) -> ureq::Request {
        let req = self.agent.request(method, &format!("{}/ga4gh/tes/v1{path}", self.base));
        match &self.token {
            Some(t) => req.set("Authorization", &format!("Bearer {t}")),
            None => req,
        }
    }

    pub fn create(&self, doc: &TesTask) -> BackendResult<String> {
        match self.request("POST", "/tasks").send_json(doc) {
            Ok(resp) => resp
                .into_json::<CreateResponse>()
                .map(|r| r.id)
                .map_err(|e| BackendError::BackendUnavailable(format!("TES create response: {e}"))),
            Err(ureq::Error::Status(code, resp)) if (400..500).contains(&code) => Err(BackendError::SubmissionRejected(
                format!("TES status {code}: {}", resp.into_string().unwrap_or_default().trim()),
            )),
            Err(e) => Err(unavailable(e)),
        }
    }

    pub fn get(&self, id: &str) -> BackendResult<TesTask> {
        let path = format!("/tasks/{}?view=FULL", percent_encoding::utf8_percent_encode(id, percent_encoding::NON_ALPHANUMERIC));
        match self.request("GET", &path).call() {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| BackendError::BackendUnavailable(format!("TES task document: {e}"))),
            Err(ureq::Error::Status(404, _)) => Err(BackendError::UnknownHandle(id.to_string())),
            Err(e) => Err(unavailable(e)),
        }
    }

    fn post_cancel(&self, id: &str) -> BackendResult<()> {
        let path = format!(
            "/tasks/{}:cancel",
            percent_encoding::utf8_percent_encode(id, percent_encoding::NON_ALPHANUMERIC)
        );
        match self.request("POST", &path).send_string("{}") {
            // drain the body so the connection goes back to the pool intact
            Ok(resp) => {
                let _ = resp.into_string();
                Ok(())
            }
            Err(ureq::Error::Status(404, _)) => Err(BackendError::UnknownHandle(id.to_string())),
            Err(e) => Err(unavailable(e)),
        }
    }
}

fn job_from_document(handle: &str, doc: &TesTask) -> BackendResult<BackendJob> {
    let state_name = doc.state.as_deref().unwrap_or("UNKNOWN");
    let state = tes_state(state_name)
        .ok_or_else(|| BackendError::BackendUnavailable(format!("TES reported unrecognized state {state_name}")))?;
    let attempt = doc.logs.last();
    let exec_logs = attempt.map(|a| a.logs.as_slice()).unwrap_or_default();
    let n = doc.executors.len().max(exec_logs.len());
    let text = |i: usize, f: fn(&TesExecutorLog) -> &Option<String>| {
        exec_logs.get(i).and_then(|l| f(l).clone()).unwrap_or_default()
    };
    let exit_codes: Vec<i32> = exec_logs.iter().map(|l| l.exit_code).collect();
    let reason = match state {
        JobState::SystemError => Some(
            attempt
                .map(|a| a.system_logs.join("\n"))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("TES reported {state_name}")),
        ),
        JobState::ExecutorError => Some(match exit_codes.iter().find(|c| **c != 0) {
            Some(c) => format!("executor exited with code {c}"),
            None => "executor error".to_string(),
        }),
        _ => None,
    };
    Ok(BackendJob {
        handle: handle.to_string(),
        state,
        stdout: (0..n).map(|i| text(i, |l| &l.stdout)).collect(),
        stderr: (0..n).map(|i| text(i, |l| &l.stderr)).collect(),
        exit_codes,
        reason,
    })
}

impl ExecutionBackend for TesClient {
    fn name(&self) -> &'static str {
        "tes"
    }

    fn submit(&self, job: &JobSpec) -> BackendResult<String> {
        self.create(&tes_document(job))
    }

    fn poll(&self, handle: &str) -> BackendResult<BackendJob> {
        job_from_document(handle, &self.get(handle)?)
    }

    fn cancel(&self, handle: &str) -> BackendResult<bool> {
        if self.poll(handle)?.state.is_terminal() {
            return Ok(false);
        }
        self.post_cancel(handle)?;
        Ok(true)
    }

    fn workspace_dir(&self, _workspace: &str) -> Option<std::path::PathBuf> {
        None
    }
}
