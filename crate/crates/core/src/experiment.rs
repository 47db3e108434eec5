//! Aggregate metadata over the executions grouped in an experiment.

use alloc::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::ExecutionRecord;
use crate::status::ExecutionStatus;
use crate::Timestamp;

pub type StatusCounts = BTreeMap<ExecutionStatus, u64>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentAggregates {
    pub executions: u64,
    pub status_counts: StatusCounts,
    /// Reserved cores multiplied by running wall time.
    pub cpu_core_seconds: f64,
    pub ram_gb_seconds: f64,
    pub earliest_submission: Option<Timestamp>,
    pub latest_completion: Option<Timestamp>,
}

impl ExperimentAggregates {
    pub fn compute<'a, I>(records: I) -> Self
    where
        I: IntoIterator<Item = &'a ExecutionRecord>,
    {
        let mut agg = ExperimentAggregates::default();
        for r in records {
            agg.executions += 1;
            if r.status.is_terminal() {
                *agg.status_counts.entry(r.status).or_insert(0) += 1;
            }
            let secs = r.run_seconds();
            agg.cpu_core_seconds += r.resource_snapshot.cpu_cores as f64 * secs;
            agg.ram_gb_seconds += r.resource_snapshot.ram_gb() * secs;
            agg.earliest_submission = Some(match agg.earliest_submission {
                Some(t) if t <= r.submitted_at => t,
                _ => r.submitted_at,
            });
            if let Some(done) = r.finished_at() {
                agg.latest_completion = Some(match agg.latest_completion {
                    Some(t) if t >= done => t,
                    _ => done,
                });
            }
        }
        agg
    }

    pub fn count(&self, status: ExecutionStatus) -> u64 {
        self.status_counts.get(&status).copied().unwrap_or(0)
    }
}
