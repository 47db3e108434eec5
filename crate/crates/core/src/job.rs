use core::fmt;

use serde::{Deserialize, Serialize};

use crate::status::ExecutionStatus;

/// Job state as reported by an execution backend (the TES task-state model).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Complete,
    ExecutorError,
    SystemError,
    Canceled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Queued | JobState::Running)
    }

    /// Total mapping into the execution status vocabulary.
    pub fn to_status(self) -> ExecutionStatus {
        match self {
            JobState::Queued => ExecutionStatus::Scheduled,
            JobState::Running => ExecutionStatus::Running,
            JobState::Complete => ExecutionStatus::Completed,
            JobState::ExecutorError | JobState::SystemError => ExecutionStatus::Error,
            JobState::Canceled => ExecutionStatus::Canceled,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Complete => "COMPLETE",
            JobState::ExecutorError => "EXECUTOR_ERROR",
            JobState::SystemError => "SYSTEM_ERROR",
            JobState::Canceled => "CANCELED",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
