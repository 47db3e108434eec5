//! Execution backends: the contract the execution manager schedules against,
//! a local sandbox backend, a TES client and an in-process mock TES server.

mod local;
pub mod mock_tes;
mod tes;

use std::path::PathBuf;

use schema_core::{Executor, JobState, MountPoint, Resources, Task, Volume};
use serde::{Deserialize, Serialize};

pub use local::{container_argv, LocalBackend, LocalConfig, PathRewriter};
pub use tes::{tes_deserialize, tes_serialize, tes_state, TesClient, TesExecutor, TesExecutorLog, TesInput, TesOutput, TesResources, TesTask, TesTaskLog};

/// One unit of backend work: a whole task, or one workflow executor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    /// Jobs sharing a workspace id see the same volume directories.
    pub workspace: String,
    pub name: Option<String>,
    pub executors: Vec<Executor>,
    pub inputs: Vec<MountPoint>,
    pub outputs: Vec<MountPoint>,
    pub volumes: Vec<Volume>,
    pub resources: Resources,
}

impl JobSpec {
    pub fn from_task(task: &Task) -> Self {
        JobSpec {
            workspace: task.uuid.to_string(),
            name: task.name.clone(),
            executors: task.executors.clone(),
            inputs: task.inputs.clone(),
            outputs: task.outputs.clone(),
            volumes: task.volumes.clone(),
            resources: task.resources,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendJob {
    pub handle: String,
    pub state: JobState,
    /// One entry per executor that has started, in order.
    pub stdout: Vec<String>,
    pub stderr: Vec<String>,
    pub exit_codes: Vec<i32>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("submission rejected: {0}")]
    SubmissionRejected(String),
    #[error("unknown backend handle {0}")]
    UnknownHandle(String),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::BackendUnavailable(_) => "backend_unavailable",
            BackendError::SubmissionRejected(_) => "submission_rejected",
            BackendError::UnknownHandle(_) => "unknown_handle",
        }
    }
}

pub type BackendResult<T> = Result<T, BackendError>;

/// Implementations tolerate concurrent calls for distinct handles and
/// concurrent poll/cancel for the same handle. Once a poll reports a terminal
/// state, later polls of that handle report the same state.
pub trait ExecutionBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn submit(&self, job: &JobSpec) -> BackendResult<String>;
    fn poll(&self, handle: &str) -> BackendResult<BackendJob>;
    /// `Ok(false)` when the job had already reached a terminal state.
    fn cancel(&self, handle: &str) -> BackendResult<bool>;

    /// Host directory standing for the root of the job filesystem, when the
    /// service stages inputs and collects outputs itself. `None` means the
    /// backend transfers mounts from their (presigned) URLs.
    fn workspace_dir(&self, workspace: &str) -> Option<PathBuf>;

    /// Frees the workspace once its outputs have been collected.
    fn discard_workspace(&self, _workspace: &str) {}
}
