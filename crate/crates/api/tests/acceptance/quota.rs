use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use schema_core::{ExecutionKind, ExecutionStatus, Quota, ResourceAmounts};

use crate::common::{sleep_task, wait_terminal, Harness, ALICE};
use crate::{collect_histories, ensure, Outcome};

const LIMIT: u64 = 5;
const SUBMISSIONS: usize = 10;

pub fn quota_race() -> Outcome {
    let h = Harness::with(|cfg| cfg.local_max_jobs = SUBMISSIONS);
    let svc = h.services().clone();
    svc.quotas
        .set_context_quota(
            "lab",
            Quota {
                max_cpu_cores: Some(LIMIT),
                ..Quota::default()
            },
        )
        .map_err(|e| e.to_string())?;

    // sampler: ledger usage and cores held by active persisted records
    let stop = Arc::new(AtomicBool::new(false));
    let sampler = {
        let svc = svc.clone();
        let stop = stop.clone();
        thread::spawn(move || {
            let (mut samples, mut worst_ledger, mut worst_records) = (0u64, 0u64, 0u64);
            while !stop.load(Ordering::SeqCst) {
                worst_ledger = worst_ledger.max(svc.quotas.context_usage("lab").cpu_cores);
                let held: u64 = svc
                    .db
                    .list_executions()
                    .expect("list")
                    .iter()
                    .filter(|r| {
                        matches!(
                            r.status,
                            ExecutionStatus::Approved | ExecutionStatus::Scheduled | ExecutionStatus::Running
                        )
                    })
                    .map(|r| r.resource_snapshot.cpu_cores)
                    .sum();
                worst_records = worst_records.max(held);
                samples += 1;
                thread::sleep(Duration::from_millis(2));
            }
            (samples, worst_ledger, worst_records)
        })
    };

    let barrier = Arc::new(Barrier::new(SUBMISSIONS));
    let url = h.url();
    let workers: Vec<_> = (0..SUBMISSIONS)
        .map(|_| {
            let barrier = barrier.clone();
            let url = url.clone();
            thread::spawn(move || {
                let client = schema_api::client::Client::new(url, ALICE);
                barrier.wait();
                client.submit_task(&sleep_task(1))
            })
        })
        .collect();
    let results: Vec<_> = workers.into_iter().map(|w| w.join().expect("worker")).collect();

    let mut admitted = Vec::new();
    let mut rejected = 0;
    for r in &results {
        match r {
            Ok(rec) if rec.status == ExecutionStatus::Scheduled => admitted.push(rec.uuid),
            Err(e) if e.status() == Some(429) => rejected += 1,
            other => return Err(format!("unexpected submission result {other:?}")),
        }
    }
    let persisted = svc.db.list_executions().map_err(|e| e.to_string())?;
    let persisted_rejected = persisted.iter().filter(|r| r.status == ExecutionStatus::Rejected).count();

    let client = h.client(ALICE);
    for u in &admitted {
        wait_terminal(&client, ExecutionKind::Task, *u, Duration::from_secs(30));
    }
    stop.store(true, Ordering::SeqCst);
    let (samples, worst_ledger, worst_records) = sampler.join().expect("sampler");

    ensure!(admitted.len() == 5 && rejected == 5, "{} scheduled, {rejected} rejected", admitted.len());
    ensure!(persisted_rejected == 5, "{persisted_rejected} REJECTED records persisted");
    ensure!(worst_ledger <= LIMIT && worst_records <= LIMIT, "oversubscribed: ledger {worst_ledger}, records {worst_records}");
    let usage = svc.quotas.context_usage("lab");
    ensure!(usage == ResourceAmounts::ZERO, "ledger not drained: {usage:?}");
    ensure!(svc.quotas.outstanding().is_empty(), "outstanding reservations remain");
    collect_histories("quota", &svc);
    Ok(format!(
        "5 SCHEDULED, 5 REJECTED; peak {worst_ledger}/{LIMIT} cores over {samples} samples; ledger back to zero"
    ))
}
