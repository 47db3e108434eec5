//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any failed. Pass a substring to run a subset.

#[path = "../common/mod.rs"]
mod common;
#[path = "../../../core/tests/oracle/mod.rs"]
mod oracle;

mod contract;
mod dag;
mod quota;
mod scenarios;
mod state_machine;
mod storage;
mod tes;

use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use schema_api::services::Services;
use uuid::Uuid;

pub type Outcome = Result<String, String>;

/// Fails the criterion with a formatted reason unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Status histories of every record persisted by any criterion.
static HISTORIES: Mutex<Vec<(&'static str, Uuid, bool)>> = Mutex::new(Vec::new());

pub fn collect_histories(criterion: &'static str, svc: &Services) {
    let recs = svc.db.list_executions().expect("list executions");
    let mut h = HISTORIES.lock().unwrap();
    for r in recs {
        h.push((criterion, r.uuid, r.history_is_consistent()));
    }
}

pub fn collected_histories() -> Vec<(&'static str, Uuid, bool)> {
    HISTORIES.lock().unwrap().clone()
}

struct Criterion {
    id: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: "scenario-1-echo-task", run: scenarios::scenario_1 },
    Criterion { id: "scenario-2-diamond-workflow", run: scenarios::scenario_2 },
    Criterion { id: "scenario-3-experiment", run: scenarios::scenario_3 },
    Criterion { id: "dag-oracle", run: dag::dag_oracle },
    Criterion { id: "quota-race", run: quota::quota_race },
    Criterion { id: "endpoint-contract", run: contract::endpoint_contract },
    Criterion { id: "storage-isolation", run: storage::isolation_and_round_trip },
    Criterion { id: "tes-round-trip", run: tes::tes_round_trip },
    Criterion { id: "offline-environment", run: scenarios::offline_environment },
    // last, so it sees the histories persisted by every other criterion
    Criterion { id: "state-machine", run: state_machine::state_machine },
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| filter.is_empty() || filter.iter().any(|f| c.id.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    println!("running {} acceptance criteria", selected.len());
    for c in &selected {
        let t0 = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:<28} {secs:>7.2}s  {detail}", c.id),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:<28} {secs:>7.2}s  {reason}", c.id);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
