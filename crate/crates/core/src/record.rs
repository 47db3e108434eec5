//! Persisted lifecycle of one submission.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::job::JobState;
use crate::model::{Resources, Task};
use crate::quota::ResourceAmounts;
use crate::status::{ExecutionStatus, IllegalTransition};
use crate::workflow::{ExecutionPlan, WorkflowSpec};
use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionKind {
    Task,
    Workflow,
}

impl ExecutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionKind::Task => "task",
            ExecutionKind::Workflow => "workflow",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Definition {
    Task(Task),
    Workflow(WorkflowSpec),
}

impl Definition {
    pub fn kind(&self) -> ExecutionKind {
        match self {
            Definition::Task(_) => ExecutionKind::Task,
            Definition::Workflow(_) => ExecutionKind::Workflow,
        }
    }

    pub fn resources(&self) -> &Resources {
        match self {
            Definition::Task(t) => &t.resources,
            Definition::Workflow(w) => &w.resources,
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Definition::Task(t) => t.name.as_deref(),
            Definition::Workflow(w) => w.name.as_deref(),
        }
    }

    pub fn executor_count(&self) -> usize {
        match self {
            Definition::Task(t) => t.executors.len(),
            Definition::Workflow(w) => w.executors.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEntry {
    pub status: ExecutionStatus,
    pub at: Timestamp,
}

/// Why an execution was rejected or failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl Failure {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            code: code.into(),
            message: message.into(),
            details: Vec::new(),
        }
    }
}

/// One backend job of a workflow: a single executor submitted on its own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowJob {
    pub executor_id: String,
    pub stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<JobState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub uuid: Uuid,
    pub kind: ExecutionKind,
    pub definition: Definition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ExecutionPlan>,
    pub status: ExecutionStatus,
    pub status_history: Vec<StatusEntry>,
    #[serde(default)]
    pub backend_handle: Option<String>,
    /// Per-executor captured output, in execution order.
    pub stdout: Vec<String>,
    pub stderr: Vec<String>,
    pub context_ref: String,
    pub submitter_ref: String,
    pub resource_snapshot: ResourceAmounts,
    pub submitted_at: Timestamp,
    pub updated_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Failure>,
    /// Quota reservation held while the execution is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jobs: Vec<WorkflowJob>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exit_codes: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collected_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExecutionRecord {
    /// Fresh record in SUBMITTED.
    pub fn new(
        uuid: Uuid,
        definition: Definition,
        context: impl Into<String>,
        submitter: impl Into<String>,
        now: Timestamp,
    ) -> Self {
        let n = definition.executor_count();
        ExecutionRecord {
            uuid,
            kind: definition.kind(),
            resource_snapshot: ResourceAmounts::for_execution(definition.resources()),
            definition,
            plan: None,
            status: ExecutionStatus::Submitted,
            status_history: alloc::vec![StatusEntry {
                status: ExecutionStatus::Submitted,
                at: now,
            }],
            backend_handle: None,
            stdout: alloc::vec![String::new(); n],
            stderr: alloc::vec![String::new(); n],
            context_ref: context.into(),
            submitter_ref: submitter.into(),
            submitted_at: now,
            updated_at: now,
            error: None,
            reservation: None,
            jobs: Vec::new(),
            exit_codes: Vec::new(),
            collected_outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Applies a checked status change and appends it to the history.
    pub fn advance(&mut self, next: ExecutionStatus, at: Timestamp) -> Result<(), IllegalTransition> {
        self.status = self.status.transition(next)?;
        self.status_history.push(StatusEntry { status: next, at });
        self.updated_at = at;
        if let Definition::Task(t) = &mut self.definition {
            t.updated_at = at;
        }
        Ok(())
    }

    /// Status equals the last history entry and the history is a legal path.
    pub fn history_is_consistent(&self) -> bool {
        let path: Vec<ExecutionStatus> = self.status_history.iter().map(|e| e.status).collect();
        path.last() == Some(&self.status) && ExecutionStatus::is_legal_path(&path)
    }

    pub fn entered_at(&self, status: ExecutionStatus) -> Option<Timestamp> {
        self.status_history
            .iter()
            .find(|e| e.status == status)
            .map(|e| e.at)
    }

    pub fn finished_at(&self) -> Option<Timestamp> {
        self.status_history
            .iter()
            .find(|e| e.status.is_terminal())
            .map(|e| e.at)
    }

    /// Seconds between entering RUNNING and reaching a terminal status.
    pub fn run_seconds(&self) -> f64 {
        match (self.entered_at(ExecutionStatus::Running), self.finished_at()) {
            (Some(start), Some(end)) if end > start => {
                (end - start).num_milliseconds() as f64 / 1000.0
            }
            _ => 0.0,
        }
    }

    /// Workspace and logs are ordered by this list of executor labels.
    pub fn executor_labels(&self) -> Vec<String> {
        match (&self.definition, &self.plan) {
            (Definition::Workflow(_), Some(plan)) => {
                plan.linearize().into_iter().map(String::from).collect()
            }
            (Definition::Workflow(w), None) => w.executors.iter().map(|e| e.id.clone()).collect(),
            (Definition::Task(t), _) => (0..t.executors.len())
                .map(|i| alloc::format!("executor-{i}"))
                .collect(),
        }
    }

    pub fn summary(&self) -> ExecutionSummary {
        ExecutionSummary {
            uuid: self.uuid,
            kind: self.kind,
            name: self.definition.name().map(String::from),
            status: self.status,
            submitted_at: self.submitted_at,
            updated_at: self.updated_at,
        }
    }
}

/// List view: identity, status and the two timestamps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub uuid: Uuid,
    pub kind: ExecutionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub status: ExecutionStatus,
    pub submitted_at: Timestamp,
    pub updated_at: Timestamp,
}
