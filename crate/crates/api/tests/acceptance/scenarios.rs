use std::process::Command;
use std::time::{Duration, Instant};

use schema_api::config::{BackendKind, StorageKind, StoreKind};
use schema_core::{ExecutionKind, ExecutionStatus};
use serde_json::Value;
use uuid::Uuid;

use crate::common::{echo_task, fixture, wait_terminal, Harness, ALICE};
use crate::{collect_histories, ensure, Outcome};

const SCENARIO_1_LIMIT: Duration = Duration::from_secs(10);
const SCENARIO_2_LIMIT: Duration = Duration::from_secs(30);

struct Cli<'a> {
    h: &'a Harness,
}

impl Cli<'_> {
    /// Runs the `schema` binary against the harness; returns stdout on success.
    fn run(&self, args: &[&str]) -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_schema"))
            .args(args)
            .env("SCHEMA_URL", self.h.url())
            .env("SCHEMA_TOKEN", ALICE)
            .output()
            .map_err(|e| format!("spawning cli: {e}"))?;
        if !out.status.success() {
            return Err(format!(
                "schema {} exited {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        Ok(out.stdout)
    }

    fn text(&self, args: &[&str]) -> Result<String, String> {
        self.run(args).map(|b| String::from_utf8_lossy(&b).into_owned())
    }

    fn uuid(&self, args: &[&str]) -> Result<Uuid, String> {
        let t = self.text(args)?;
        Uuid::parse_str(t.trim()).map_err(|_| format!("expected a uuid, got {t:?}"))
    }
}

fn path(name: &str) -> String {
    fixture(name).display().to_string()
}

pub fn scenario_1() -> Outcome {
    let h = Harness::start();
    let cli = Cli { h: &h };
    let t0 = Instant::now();
    let uuid = cli.uuid(&["submit-task", &path("scenario-1-echo.json")])?;
    let watch = cli.text(&["status", &uuid.to_string(), "--watch", "--interval-ms", "50", "--timeout-secs", "10"])?;
    let elapsed = t0.elapsed();
    let last = watch.lines().last().unwrap_or_default().to_string();
    ensure!(last.contains("COMPLETED"), "watch ended with {last:?}");
    ensure!(elapsed < SCENARIO_1_LIMIT, "took {elapsed:?}");

    let expected = b"hello from schema\n";
    let logs = cli.run(&["logs", &uuid.to_string()])?;
    ensure!(logs == expected, "cli logs {:?}", String::from_utf8_lossy(&logs));
    let api = h.client(ALICE).logs(ExecutionKind::Task, uuid, schema_api::executions::LogChannel::Stdout);
    ensure!(
        api.as_ref().ok().map(|l| l.concat().into_bytes()) == Some(expected.to_vec()),
        "stdout endpoint returned {api:?}"
    );
    collect_histories("scenario-1", h.services());
    Ok(format!("COMPLETED in {:.2}s, stdout byte-exact ({} bytes)", elapsed.as_secs_f64(), expected.len()))
}

pub fn scenario_2() -> Outcome {
    let h = Harness::start();
    let cli = Cli { h: &h };
    let t0 = Instant::now();
    let uuid = cli.uuid(&["submit-workflow", &path("scenario-2-diamond.json")])?;
    let watch = cli.text(&["status", &uuid.to_string(), "--watch", "--interval-ms", "50", "--timeout-secs", "30"])?;
    let elapsed = t0.elapsed();
    ensure!(watch.lines().last().is_some_and(|l| l.contains("COMPLETED")), "watch output {watch:?}");
    ensure!(elapsed < SCENARIO_2_LIMIT, "took {elapsed:?}");

    let rec = h.services().db.get_execution(uuid).map_err(|e| e.to_string())?.ok_or("record missing")?;
    let plan = rec.plan.clone().ok_or("no persisted plan")?;
    let want = vec![vec!["E1".to_string()], vec!["E2".to_string(), "E3".to_string()]];
    ensure!(plan.stages == want, "persisted plan {plan}");

    let client = h.client(ALICE);
    let upper = client.download("results/upper.txt").map_err(|e| e.to_string())?;
    let count = client.download("results/count.txt").map_err(|e| e.to_string())?;
    ensure!(upper == b"HELLO\n", "upper.txt = {:?}", String::from_utf8_lossy(&upper));
    ensure!(count == b"6\n", "count.txt = {:?}", String::from_utf8_lossy(&count));
    let listed = client.list_files(Some("results/")).map_err(|e| e.to_string())?;
    let bucket = schema_api::files::bucket_for("alice");
    ensure!(
        listed.items.len() == 2 && listed.items.iter().all(|o| o.bucket == bucket),
        "bucket listing {:?}",
        listed.items
    );
    collect_histories("scenario-2", h.services());
    Ok(format!("plan {plan}, 2 outputs in {bucket}, {:.2}s end to end", elapsed.as_secs_f64()))
}

pub fn scenario_3() -> Outcome {
    let h = Harness::start();
    let cli = Cli { h: &h };
    let a = cli.uuid(&["submit-task", &path("scenario-3-task-a.json")])?;
    let b = cli.uuid(&["submit-task", &path("scenario-3-task-b.json")])?;
    let client = h.client(ALICE);
    for u in [a, b] {
        let rec = wait_terminal(&client, ExecutionKind::Task, u, Duration::from_secs(20));
        ensure!(rec.status == ExecutionStatus::Completed, "{u} ended {:?}", rec.status);
    }
    cli.run(&["experiment", "create", "exp1", "--task", &a.to_string(), "--task", &b.to_string()])?;
    let shown: Value = serde_json::from_slice(&cli.run(&["--json", "experiment", "show", "alice", "exp1"])?)
        .map_err(|e| e.to_string())?;
    let refs: Vec<String> = shown["task_refs"]
        .as_array()
        .ok_or("no task_refs")?
        .iter()
        .filter_map(|v| v.as_str().map(String::from))
        .collect();
    ensure!(
        refs.len() == 2 && refs.contains(&a.to_string()) && refs.contains(&b.to_string()),
        "task_refs {refs:?}"
    );
    let completed = shown["aggregates"]["status_counts"]["COMPLETED"].as_u64();
    ensure!(completed == Some(2), "COMPLETED count {completed:?}");

    let view = client.get_experiment("alice", "exp1").map_err(|e| e.to_string())?;
    ensure!(view.aggregates.count(ExecutionStatus::Completed) == 2, "API aggregates {:?}", view.aggregates);
    collect_histories("scenario-3", h.services());
    Ok(format!(
        "experiment alice/exp1 holds both uuids, COMPLETED=2, {:.3} core-seconds",
        view.aggregates.cpu_core_seconds
    ))
}

pub fn offline_environment() -> Outcome {
    let h = Harness::with(|cfg| {
        cfg.store = StoreKind::Redb;
        cfg.storage = StorageKind::Local;
        cfg.backend = BackendKind::Local;
        cfg.container_engine = None;
    });
    ensure!(h.server.addr().ip().is_loopback(), "bound to {}", h.server.addr());
    let client = h.client(ALICE);
    // no runtime is consulted, so the image name is never resolved
    let mut req = echo_task("offline");
    req.executors[0].image = "registry.invalid/never-pulled:0".into();
    let rec = client.submit_task(&req).map_err(|e| e.to_string())?;
    let done = wait_terminal(&client, ExecutionKind::Task, rec.uuid, Duration::from_secs(10));
    ensure!(done.status == ExecutionStatus::Completed, "ended {:?}", done.status);
    ensure!(h.dir.path().join("schema.redb").exists(), "embedded database file missing");
    collect_histories("offline", h.services());
    Ok("embedded store, local storage, local backend without container engine, loopback only".into())
}
