use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use schema_api::backend::mock_tes::{MockTes, MockTesConfig};
use schema_api::backend::{tes_deserialize, tes_serialize, tes_state, ExecutionBackend, TesClient, TesTask};
use schema_core::{ExecutionStatus, Executor, MountPoint, Resources, Task, TaskRequest, Volume};
use uuid::Uuid;

use crate::{ensure, Outcome};

const TASKS: usize = 100;
const TOKEN: &str = "tes-secret";

/// Terminal outcome a generated task is steered into.
#[derive(Clone, Copy, Debug)]
enum Steer {
    Complete,
    ExecutorError,
    SystemError,
    Cancel,
}

impl Steer {
    /// Expected TES state name and gateway status, written out independently
    /// of the library's folding table.
    fn expected(self) -> (&'static str, ExecutionStatus) {
        match self {
            Steer::Complete => ("COMPLETE", ExecutionStatus::Completed),
            Steer::ExecutorError => ("EXECUTOR_ERROR", ExecutionStatus::Error),
            Steer::SystemError => ("SYSTEM_ERROR", ExecutionStatus::Error),
            Steer::Cancel => ("CANCELED", ExecutionStatus::Canceled),
        }
    }
}

fn word(rng: &mut StdRng) -> String {
    let len = rng.gen_range(1..8);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn generate(rng: &mut StdRng, i: usize) -> Task {
    let images = ["alpine", "ubuntu:22.04", "python:3.12-slim", "ghcr.io/org/tool@sha256:abc"];
    let executors = (0..rng.gen_range(1..=3))
        .map(|_| {
            let mut e = if rng.gen_bool(0.5) {
                Executor::new(*images.choose(rng).unwrap(), ["echo".to_string(), word(rng), word(rng)])
            } else {
                Executor::new(*images.choose(rng).unwrap(), ["sh".to_string(), "-c".into(), format!("ls {}", word(rng))])
            };
            for _ in 0..rng.gen_range(0..3) {
                e.env.insert(word(rng).to_uppercase(), word(rng));
            }
            if rng.gen_bool(0.3) {
                e.workdir = Some(format!("/work/{}", word(rng)));
            }
            e
        })
        .collect();
    let mut req = TaskRequest::new(executors);
    req.name = rng.gen_bool(0.7).then(|| format!("task-{i}-{}", word(rng)));
    req.inputs = (0..rng.gen_range(0..3))
        .map(|k| MountPoint::input(format!("s3://in/{}/{k}", word(rng)), format!("/data/in/{k}")))
        .collect();
    req.outputs = (0..rng.gen_range(0..3))
        .map(|k| MountPoint::output(format!("s3://out/{}/{k}", word(rng)), format!("/data/out/{k}")))
        .collect();
    req.volumes = (0..rng.gen_range(0..2)).map(|k| Volume::new(format!("/vol{k}"))).collect();
    req.resources = Resources::new(
        rng.gen_range(1..=16),
        rng.gen_range(1..=64) as f64 * 0.25,
        rng.gen_range(1..=400) as f64 * 0.5,
    );
    Task::from_request(req, Uuid::new_v4(), "lab", "alice", chrono::Utc::now())
}

/// Field-by-field comparison of what the server received against the task.
fn mapping_mismatches(task: &Task, got: &TesTask) -> Vec<String> {
    let mut m = Vec::new();
    if got.name != task.name {
        m.push(format!("name {:?} != {:?}", got.name, task.name));
    }
    if got.executors.len() != task.executors.len() {
        m.push("executor count".into());
    }
    for (g, e) in got.executors.iter().zip(&task.executors) {
        if g.image != e.image || g.command != e.command || g.env != e.env || g.workdir != e.workdir {
            m.push(format!("executor {g:?} != {e:?}"));
        }
    }
    let ins: Vec<(Option<&str>, &str)> = got.inputs.iter().map(|i| (i.url.as_deref(), i.path.as_str())).collect();
    let want: Vec<(Option<&str>, &str)> = task.inputs.iter().map(|i| (Some(i.url.as_str()), i.path.as_str())).collect();
    if ins != want {
        m.push(format!("inputs {ins:?} != {want:?}"));
    }
    let outs: Vec<(&str, &str)> = got.outputs.iter().map(|o| (o.url.as_str(), o.path.as_str())).collect();
    let want: Vec<(&str, &str)> = task.outputs.iter().map(|o| (o.url.as_str(), o.path.as_str())).collect();
    if outs != want {
        m.push(format!("outputs {outs:?} != {want:?}"));
    }
    let vols: Vec<&str> = task.volumes.iter().map(|v| v.path.as_str()).collect();
    if got.volumes != vols {
        m.push(format!("volumes {:?} != {vols:?}", got.volumes));
    }
    let r = got.resources.clone().unwrap_or_default();
    if r.cpu_cores != Some(task.resources.cpu_cores)
        || r.ram_gb != Some(task.resources.ram_gb)
        || r.disk_gb != Some(task.resources.disk_gb)
    {
        m.push(format!("resources {r:?} != {:?}", task.resources));
    }
    m
}

fn folding_table() -> Result<(), String> {
    use ExecutionStatus::*;
    let table: BTreeMap<&str, Option<ExecutionStatus>> = BTreeMap::from([
        ("UNKNOWN", Some(Scheduled)),
        ("QUEUED", Some(Scheduled)),
        ("INITIALIZING", Some(Scheduled)),
        ("RUNNING", Some(Running)),
        ("PAUSED", Some(Running)),
        ("COMPLETE", Some(Completed)),
        ("EXECUTOR_ERROR", Some(Error)),
        ("SYSTEM_ERROR", Some(Error)),
        ("PREEMPTED", Some(Error)),
        ("CANCELED", Some(Canceled)),
        ("CANCELING", Some(Canceled)),
        ("BOGUS", None),
    ]);
    for (name, want) in table {
        let got = tes_state(name).map(|s| s.to_status());
        ensure!(got == want, "TES state {name} folds to {got:?}, expected {want:?}");
    }
    Ok(())
}

pub fn tes_round_trip() -> Outcome {
    folding_table()?;
    let mock = MockTes::start(MockTesConfig {
        queued_for: Duration::from_millis(400),
        run_for: Duration::from_millis(200),
        token: Some(TOKEN.into()),
    })
    .map_err(|e| e.to_string())?;
    let client = TesClient::new(mock.url(), Some(TOKEN.into()));
    let mut rng = StdRng::seed_from_u64(0x7e5);
    let steers = [Steer::Complete, Steer::ExecutorError, Steer::SystemError, Steer::Cancel];

    let mut submitted = Vec::with_capacity(TASKS);
    for i in 0..TASKS {
        let task = generate(&mut rng, i);
        let steer = steers[i % steers.len()];
        let faults = mock.faults();
        faults.executor_error.store(matches!(steer, Steer::ExecutorError), Ordering::SeqCst);
        faults.system_error.store(matches!(steer, Steer::SystemError), Ordering::SeqCst);
        let doc = tes_serialize(&task);
        let id = client.create(&doc).map_err(|e| format!("create {i}: {e}"))?;
        if let Steer::Cancel = steer {
            let canceled = client.cancel(&id).map_err(|e| format!("cancel {i}: {e}"))?;
            ensure!(canceled, "cancel of queued task {id} reported already terminal");
        }
        submitted.push((task, steer, id));
    }
    mock.faults().executor_error.store(false, Ordering::SeqCst);
    mock.faults().system_error.store(false, Ordering::SeqCst);

    for (task, _, id) in &submitted {
        let received = mock.received(id).ok_or_else(|| format!("mock has no task {id}"))?;
        let mism = mapping_mismatches(task, &received);
        ensure!(mism.is_empty(), "{id}: {mism:?}");
        let back = tes_deserialize(&received);
        ensure!(back == task.to_request(), "{id}: deserialized request differs: {back:?}");
    }

    let deadline = Instant::now() + Duration::from_secs(20);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (task, steer, id) in &submitted {
        let job = loop {
            let job = client.poll(id).map_err(|e| format!("poll {id}: {e}"))?;
            if job.state.is_terminal() {
                break job;
            }
            ensure!(Instant::now() < deadline, "{id} still {} at deadline", job.state);
            std::thread::sleep(Duration::from_millis(20));
        };
        let (tes_name, status) = steer.expected();
        let raw = client.get(id).map_err(|e| e.to_string())?;
        ensure!(raw.state.as_deref() == Some(tes_name), "{id} ({steer:?}) reports {:?}", raw.state);
        ensure!(job.state.to_status() == status, "{id} ({steer:?}) maps to {:?}", job.state.to_status());
        if let Steer::Complete = steer {
            ensure!(job.exit_codes.iter().all(|c| *c == 0), "{id} exit codes {:?}", job.exit_codes);
            for (k, e) in task.executors.iter().enumerate() {
                if e.command[0] == "echo" {
                    let want = format!("{}\n", e.command[1..].join(" "));
                    ensure!(job.stdout[k] == want, "{id} executor {k} stdout {:?}", job.stdout[k]);
                }
            }
        }
        ensure!(
            !client.cancel(id).map_err(|e| e.to_string())?,
            "cancel of terminal {id} claimed to stop it"
        );
        ensure!(client.poll(id).map_err(|e| e.to_string())?.state == job.state, "{id} terminal state not stable");
        *counts.entry(tes_name).or_default() += 1;
    }
    ensure!(mock.task_count() == TASKS, "mock holds {} tasks", mock.task_count());
    Ok(format!("{TASKS} tasks round-tripped, terminal states {counts:?}, 12-state folding table matches"))
}
