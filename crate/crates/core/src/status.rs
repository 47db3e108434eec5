use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Lifecycle status of a task or workflow execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionStatus {
    Submitted,
    Approved,
    Scheduled,
    Running,
    Completed,
    Error,
    Canceled,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("illegal status transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: ExecutionStatus,
    pub to: ExecutionStatus,
}

impl ExecutionStatus {
    pub const ALL: [ExecutionStatus; 8] = [
        ExecutionStatus::Submitted,
        ExecutionStatus::Approved,
        ExecutionStatus::Scheduled,
        ExecutionStatus::Running,
        ExecutionStatus::Completed,
        ExecutionStatus::Error,
        ExecutionStatus::Canceled,
        ExecutionStatus::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Submitted => "SUBMITTED",
            ExecutionStatus::Approved => "APPROVED",
            ExecutionStatus::Scheduled => "SCHEDULED",
            ExecutionStatus::Running => "RUNNING",
            ExecutionStatus::Completed => "COMPLETED",
            ExecutionStatus::Error => "ERROR",
            ExecutionStatus::Canceled => "CANCELED",
            ExecutionStatus::Rejected => "REJECTED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ExecutionStatus::Completed
                | ExecutionStatus::Error
                | ExecutionStatus::Canceled
                | ExecutionStatus::Rejected
        )
    }

    /// States from which a cancel request takes effect.
    pub fn is_cancelable(self) -> bool {
        matches!(
            self,
            ExecutionStatus::Approved | ExecutionStatus::Scheduled | ExecutionStatus::Running
        )
    }

    pub fn successors(self) -> &'static [ExecutionStatus] {
        use ExecutionStatus::*;
        match self {
            Submitted => &[Approved, Rejected],
            Approved => &[Scheduled, Canceled],
            Scheduled => &[Running, Error, Canceled],
            Running => &[Completed, Error, Canceled],
            Completed | Error | Canceled | Rejected => &[],
        }
    }

    pub fn can_transition_to(self, next: ExecutionStatus) -> bool {
        self.successors().contains(&next)
    }

    /// Checked transition: returns `next` when the move is legal.
    pub fn transition(self, next: ExecutionStatus) -> Result<ExecutionStatus, IllegalTransition> {
        if self.can_transition_to(next) {
            Ok(next)
        } else {
            Err(IllegalTransition {
                from: self,
                to: next,
            })
        }
    }

    /// Returns true when `path` starts at SUBMITTED and every step is legal.
    pub fn is_legal_path(path: &[ExecutionStatus]) -> bool {
        match path.first() {
            Some(ExecutionStatus::Submitted) => {
                path.windows(2).all(|w| w[0].can_transition_to(w[1]))
            }
            _ => false,
        }
    }
}

/// Free-function form of [`ExecutionStatus::transition`].
pub fn transition(
    current: ExecutionStatus,
    next: ExecutionStatus,
) -> Result<ExecutionStatus, IllegalTransition> {
    current.transition(next)
}

impl fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown execution status")]
pub struct UnknownStatus;

impl FromStr for ExecutionStatus {
    type Err = UnknownStatus;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExecutionStatus::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or(UnknownStatus)
    }
}
