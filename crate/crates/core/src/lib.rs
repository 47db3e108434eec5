//! Domain model for a containerized task and workflow execution gateway.
//!
//! This crate is `no_std` and only needs `alloc`. It holds the resource types
//! shared by every service component, the execution status state machine,
//! task validation, the native workflow document parser with its dependency
//! resolver, quota merge arithmetic and experiment aggregation. Anything that
//! touches a clock, a socket or a disk lives in the `schema-api` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod experiment;
pub mod job;
pub mod model;
pub mod path;
pub mod quota;
pub mod record;
pub mod status;
pub mod validate;
pub mod workflow;

pub use experiment::{ExperimentAggregates, StatusCounts};
pub use job::JobState;
pub use model::{
    Context, Executor, Experiment, MountDirection, MountPoint, Resources, Task, TaskRequest,
    Volume,
};
pub use path::{is_normalized, normalize_path, validate_key, KeyError};
pub use quota::{Dimension, Quota, ResourceAmounts};
pub use record::{
    Definition, ExecutionKind, ExecutionRecord, ExecutionSummary, Failure, StatusEntry,
    WorkflowJob,
};
pub use status::{ExecutionStatus, IllegalTransition};
pub use validate::{validate_task, Violation};
pub use workflow::{
    parse_workflow, resolve_order, ExecutionPlan, OrderError, ParseError, WorkflowExecutor,
    WorkflowSpec,
};

/// UTC timestamp used on every persisted record.
pub type Timestamp = chrono::DateTime<chrono::Utc>;
