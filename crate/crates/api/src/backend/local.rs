//! Desk-scale backend: runs executor commands as host processes inside a
//! per-workspace sandbox directory.
//!
//! Layout under the configured root:
//! `<root>/<workspace>/volumes/<declared path>` and
//! `<root>/<workspace>/logs/<handle>/executor-<i>.{out,err}`.
//!
//! Without a container engine, declared volume and mount paths appearing in
//! argv, env values and the workdir are rewritten to their sandbox location.

use std::collections::HashMap;
use std::fs::{self, File};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use schema_core::{Executor, JobState};

use super::{BackendError, BackendJob, BackendResult, ExecutionBackend, JobSpec};

const POLL_STEP: Duration = Duration::from_millis(10);

/// Env var naming the sandbox root the declared paths were mapped into.
pub const SANDBOX_ENV: &str = "SCHEMA_SANDBOX";

#[derive(Clone, Debug)]
pub struct LocalConfig {
    pub root: PathBuf,
    /// Jobs allowed to run at once; 0 refuses every submission.
    pub max_concurrent: usize,
    /// e.g. `podman`; when set, executors run as `<engine> run ...`.
    pub container_engine: Option<String>,
}

/// Maps declared absolute paths to host paths under a sandbox directory.
#[derive(Clone, Debug)]
pub struct PathRewriter {
    sandbox: PathBuf,
    /// Declared roots, longest first.
    roots: Vec<String>,
}

fn path_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '.' | '_' | '-' | '/' | '~' | '+' | '@' | '%')
}

impl PathRewriter {
    pub fn new<I, S>(sandbox: impl Into<PathBuf>, declared: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut roots: Vec<String> = declared
            .into_iter()
            .map(Into::into)
            .filter(|r| r.starts_with('/') && r != "/")
            .collect();
        roots.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        roots.dedup();
        PathRewriter {
            sandbox: sandbox.into(),
            roots,
        }
    }

    pub fn host_path(&self, declared: &str) -> PathBuf {
        self.sandbox.join(declared.trim_start_matches('/'))
    }

    /// Replaces each whole-token occurrence of a declared root, or of a path
    /// below it, with its host location.
    pub fn rewrite(&self, s: &str) -> String {
        let mut out = String::with_capacity(s.len());
        let mut i = 0;
        let mut prev: Option<char> = None;
        'scan: while i < s.len() {
            let rest = &s[i..];
            if prev.is_none_or(|p| !path_char(p)) {
                for root in &self.roots {
                    if let Some(after) = rest.strip_prefix(root.as_str()) {
                        let next = after.chars().next();
                        if next.is_none_or(|c| c == '/' || !path_char(c)) {
                            out.push_str(&self.host_path(root).to_string_lossy());
                            i += root.len();
                            prev = root.chars().last();
                            continue 'scan;
                        }
                    }
                }
            }
            let c = rest.chars().next().expect("non-empty remainder");
            out.push(c);
            prev = Some(c);
            i += c.len_utf8();
        }
        out
    }
}

/// Argv for running one executor under a container engine with each declared
/// root bind-mounted from the sandbox.
pub fn container_argv(engine: &str, exec: &Executor, rw: &PathRewriter) -> Vec<String> {
    let mut argv = vec![engine.to_string(), "run".into(), "--rm".into(), "--network=none".into()];
    let mut roots = rw.roots.clone();
    roots.sort();
    for root in &roots {
        argv.push("-v".into());
        argv.push(format!("{}:{root}", rw.host_path(root).display()));
    }
    if let Some(w) = &exec.workdir {
        argv.push("-w".into());
        argv.push(w.clone());
    }
    for (k, v) in &exec.env {
        argv.push("-e".into());
        argv.push(format!("{k}={v}"));
    }
    argv.push(exec.image.clone());
    argv.extend(exec.command.iter().cloned());
    argv
}

struct Run {
    state: JobState,
    exit_codes: Vec<i32>,
    reason: Option<String>,
    /// Process group of the executor currently running; cleared once reaped.
    pgid: Option<i32>,
}

struct Slot {
    workspace: String,
    executors: usize,
    run: Mutex<Run>,
}

impl Slot {
    fn log_path(&self, root: &Path, handle: &str, i: usize, ext: &str) -> PathBuf {
        root.join(&self.workspace)
            .join("logs")
            .join(handle)
            .join(format!("executor-{i}.{ext}"))
    }

    /// Moves to `next` unless already terminal.
    fn settle(&self, next: JobState, reason: Option<String>) {
        let mut r = self.run.lock();
        if !r.state.is_terminal() {
            r.state = next;
            if reason.is_some() {
                r.reason = reason;
            }
        }
    }
}

struct Inner {
    cfg: LocalConfig,
    jobs: Mutex<HashMap<String, Arc<Slot>>>,
    active: Mutex<usize>,
    freed: Condvar,
}

#[derive(Clone)]
pub struct LocalBackend {
    inner: Arc<Inner>,
}

impl LocalBackend {
    pub fn new(cfg: LocalConfig) -> std::io::Result<Self> {
        fs::create_dir_all(&cfg.root)?;
        Ok(LocalBackend {
            inner: Arc::new(Inner {
                cfg,
                jobs: Mutex::new(HashMap::new()),
                active: Mutex::new(0),
                freed: Condvar::new(),
            }),
        })
    }

    fn sandbox(&self, workspace: &str) -> PathBuf {
        self.inner.cfg.root.join(workspace).join("volumes")
    }

    fn slot(&self, handle: &str) -> BackendResult<Arc<Slot>> {
        self.inner
            .jobs
            .lock()
            .get(handle)
            .cloned()
            .ok_or_else(|| BackendError::UnknownHandle(handle.to_string()))
    }
}

fn valid_workspace(ws: &str) -> bool {
    !ws.is_empty()
        && ws != "."
        && ws != ".."
        && ws.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ExecutionBackend for LocalBackend {
    fn name(&self) -> &'static str {
        "local"
    }

    fn submit(&self, job: &JobSpec) -> BackendResult<String> {
        if self.inner.cfg.max_concurrent == 0 {
            return Err(BackendError::SubmissionRejected("local backend capacity is 0".into()));
        }
        if !valid_workspace(&job.workspace) {
            return Err(BackendError::SubmissionRejected(format!("invalid workspace id {:?}", job.workspace)));
        }
        let handle = format!("local-{}", uuid::Uuid::new_v4().simple());
        let sandbox = self.sandbox(&job.workspace);
        let declared = job
            .volumes
            .iter()
            .map(|v| v.path.clone())
            .chain(job.inputs.iter().chain(&job.outputs).map(|m| m.path.clone()));
        let rw = PathRewriter::new(&sandbox, declared);
        let slot = Arc::new(Slot {
            workspace: job.workspace.clone(),
            executors: job.executors.len(),
            run: Mutex::new(Run {
                state: JobState::Queued,
                exit_codes: Vec::new(),
                reason: None,
                pgid: None,
            }),
        });
        let prepare = || -> std::io::Result<()> {
            fs::create_dir_all(&sandbox)?;
            for v in &job.volumes {
                fs::create_dir_all(rw.host_path(&v.path))?;
            }
            for m in job.inputs.iter().chain(&job.outputs) {
                if let Some(parent) = rw.host_path(&m.path).parent() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::create_dir_all(slot.log_path(&self.inner.cfg.root, &handle, 0, "out").parent().unwrap())
        };
        prepare().map_err(|e| BackendError::BackendUnavailable(format!("preparing workspace: {e}")))?;
        self.inner.jobs.lock().insert(handle.clone(), slot.clone());

        let inner = self.inner.clone();
        let executors = job.executors.clone();
        let h = handle.clone();
        thread::Builder::new()
            .name(format!("job-{handle}"))
            .spawn(move || supervise(inner, h, slot, executors, rw))
            .map_err(|e| BackendError::BackendUnavailable(format!("spawning supervisor: {e}")))?;
        Ok(handle)
    }

    fn poll(&self, handle: &str) -> BackendResult<BackendJob> {
        let slot = self.slot(handle)?;
        let (state, exit_codes, reason) = {
            let r = slot.run.lock();
            (r.state, r.exit_codes.clone(), r.reason.clone())
        };
        let read = |i: usize, ext: &str| {
            fs::read(slot.log_path(&self.inner.cfg.root, handle, i, ext))
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .unwrap_or_default()
        };
        Ok(BackendJob {
            handle: handle.to_string(),
            state,
            stdout: (0..slot.executors).map(|i| read(i, "out")).collect(),
            stderr: (0..slot.executors).map(|i| read(i, "err")).collect(),
            exit_codes,
            reason,
        })
    }

    fn cancel(&self, handle: &str) -> BackendResult<bool> {
        let slot = self.slot(handle)?;
        let mut r = slot.run.lock();
        if r.state.is_terminal() {
            return Ok(false);
        }
        r.state = JobState::Canceled;
        if let Some(pgid) = r.pgid {
            // SAFETY: plain syscall; pgid belongs to a child not yet reaped.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
        }
        drop(r);
        self.inner.freed.notify_all();
        Ok(true)
    }

    fn workspace_dir(&self, workspace: &str) -> Option<PathBuf> {
        valid_workspace(workspace).then(|| self.sandbox(workspace))
    }

    fn discard_workspace(&self, workspace: &str) {
        if valid_workspace(workspace) {
            let _ = fs::remove_dir_all(self.sandbox(workspace));
        }
    }
}

fn supervise(inner: Arc<Inner>, handle: String, slot: Arc<Slot>, executors: Vec<Executor>, rw: PathRewriter) {
    {
        let mut active = inner.active.lock();
        while *active >= inner.cfg.max_concurrent {
            if slot.run.lock().state.is_terminal() {
                return;
            }
            inner.freed.wait_for(&mut active, Duration::from_millis(50));
        }
        let mut r = slot.run.lock();
        if r.state.is_terminal() {
            return;
        }
        r.state = JobState::Running;
        *active += 1;
    }

    let outcome = run_executors(&inner, &handle, &slot, &executors, &rw);
    match outcome {
        Ok(None) => slot.settle(JobState::Complete, None),
        Ok(Some(code)) => slot.settle(JobState::ExecutorError, Some(format!("executor exited with code {code}"))),
        Err(reason) => slot.settle(JobState::SystemError, Some(reason)),
    }

    *inner.active.lock() -= 1;
    inner.freed.notify_all();
}

/// `Ok(Some(code))` for the first failing executor.
fn run_executors(
    inner: &Inner,
    handle: &str,
    slot: &Slot,
    executors: &[Executor],
    rw: &PathRewriter,
) -> Result<Option<i32>, String> {
    for (i, exec) in executors.iter().enumerate() {
        if slot.run.lock().state.is_terminal() {
            return Ok(None);
        }
        let out = File::create(slot.log_path(&inner.cfg.root, handle, i, "out")).map_err(|e| e.to_string())?;
        let err = File::create(slot.log_path(&inner.cfg.root, handle, i, "err")).map_err(|e| e.to_string())?;
        let mut cmd = match &inner.cfg.container_engine {
            Some(engine) => {
                let argv = container_argv(engine, exec, rw);
                let mut c = Command::new(&argv[0]);
                c.args(&argv[1..]);
                c
            }
            None => {
                let mut c = Command::new(rw.rewrite(&exec.command[0]));
                c.args(exec.command[1..].iter().map(|a| rw.rewrite(a)));
                for (k, v) in &exec.env {
                    c.env(k, rw.rewrite(v));
                }
                let cwd = match &exec.workdir {
                    Some(w) => rw.host_path(w),
                    None => rw.sandbox.clone(),
                };
                fs::create_dir_all(&cwd).map_err(|e| format!("creating workdir: {e}"))?;
                c.current_dir(cwd);
                c
            }
        };
        cmd.env(SANDBOX_ENV, &rw.sandbox)
            .stdin(Stdio::null())
            .stdout(Stdio::from(out))
            .stderr(Stdio::from(err))
            .process_group(0);

        let mut child = {
            let mut r = slot.run.lock();
            if r.state.is_terminal() {
                return Ok(None);
            }
            let child = cmd
                .spawn()
                .map_err(|e| format!("executor {i}: cannot start {:?}: {e}", exec.command[0]))?;
            r.pgid = Some(child.id() as i32);
            child
        };
        let code = wait(&mut child, slot).map_err(|e| format!("executor {i}: {e}"))?;
        let mut r = slot.run.lock();
        if r.state.is_terminal() {
            return Ok(None);
        }
        r.exit_codes.push(code);
        if code != 0 {
            return Ok(Some(code));
        }
    }
    Ok(None)
}

/// Reaps under the slot lock so a concurrent cancel never signals a pgid
/// that may have been recycled.
fn wait(child: &mut Child, slot: &Slot) -> std::io::Result<i32> {
    loop {
        {
            let mut r = slot.run.lock();
            if let Some(status) = child.try_wait()? {
                r.pgid = None;
                return Ok(status
                    .code()
                    .unwrap_or_else(|| 128 + status.signal().unwrap_or(0)));
            }
        }
        thread::sleep(POLL_STEP);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use schema_core::{MountPoint, Resources, Volume};
    use std::time::Instant;

    fn backend(max: usize) -> (LocalBackend, tempfile::TempDir) {
        let d = tempfile::tempdir().unwrap();
        let b = LocalBackend::new(LocalConfig {
            root: d.path().to_path_buf(),
            max_concurrent: max,
            container_engine: None,
        })
        .unwrap();
        (b, d)
    }

    fn job(ws: &str, cmds: &[&[&str]]) -> JobSpec {
        JobSpec {
            workspace: ws.into(),
            name: None,
            executors: cmds.iter().map(|c| Executor::new("alpine", c.iter().copied())).collect(),
            inputs: vec![],
            outputs: vec![],
            volumes: vec![Volume::new("/vol")],
            resources: Resources::default(),
        }
    }

    fn wait_terminal(b: &LocalBackend, h: &str) -> BackendJob {
        let start = Instant::now();
        loop {
            let j = b.poll(h).unwrap();
            if j.state.is_terminal() {
                return j;
            }
            assert!(start.elapsed() < Duration::from_secs(10), "job {h} stuck in {:?}", j.state);
            thread::sleep(Duration::from_millis(5));
        }
    }

    #[test]
    fn rewriter_respects_token_boundaries() {
        let rw = PathRewriter::new("/sb", ["/vol", "/vol/in/x.txt", "/data"]);
        assert_eq!(rw.rewrite("/vol/a/y"), "/sb/vol/a/y");
        assert_eq!(rw.rewrite("cat /vol/in/x.txt > /data/o"), "cat /sb/vol/in/x.txt > /sb/data/o");
        assert_eq!(rw.rewrite("/volume /x/vol --out=/vol"), "/volume /x/vol --out=/sb/vol");
        assert_eq!(rw.rewrite("echo hi"), "echo hi");
        assert_eq!(rw.rewrite("'/vol'"), "'/sb/vol'");
    }

    #[test]
    fn echo_completes_with_exact_stdout() {
        let (b, _d) = backend(2);
        let h = b.submit(&job("w1", &[&["echo", "hi"]])).unwrap();
        let j = wait_terminal(&b, &h);
        assert_eq!(j.state, JobState::Complete);
        assert_eq!(j.stdout, ["hi\n"]);
        assert_eq!(j.exit_codes, [0]);
    }

    #[test]
    fn failing_executor_stops_the_job() {
        let (b, _d) = backend(2);
        let h = b
            .submit(&job("w2", &[&["sh", "-c", "echo err >&2; exit 1"], &["echo", "never"]]))
            .unwrap();
        let j = wait_terminal(&b, &h);
        assert_eq!(j.state, JobState::ExecutorError);
        assert_eq!(j.exit_codes, [1]);
        assert_eq!(j.stderr, ["err\n", ""]);
        assert_eq!(j.stdout, ["", ""]);
    }

    #[test]
    fn missing_binary_is_a_system_error() {
        let (b, _d) = backend(1);
        let h = b.submit(&job("w3", &[&["/definitely/not/here"]])).unwrap();
        let j = wait_terminal(&b, &h);
        assert_eq!(j.state, JobState::SystemError);
        assert!(j.reason.unwrap().contains("cannot start"));
    }

    #[test]
    fn zero_capacity_rejects() {
        let (b, _d) = backend(0);
        assert!(matches!(b.submit(&job("w", &[&["true"]])), Err(BackendError::SubmissionRejected(_))));
    }

    #[test]
    fn unknown_handle() {
        let (b, _d) = backend(1);
        assert!(matches!(b.poll("nope"), Err(BackendError::UnknownHandle(_))));
        assert!(matches!(b.cancel("nope"), Err(BackendError::UnknownHandle(_))));
    }

    #[test]
    fn cancel_sleeping_job() {
        let (b, _d) = backend(1);
        let h = b.submit(&job("w4", &[&["sleep", "30"]])).unwrap();
        while b.poll(&h).unwrap().state != JobState::Running {
            thread::sleep(Duration::from_millis(5));
        }
        let t = Instant::now();
        assert!(b.cancel(&h).unwrap());
        assert_eq!(b.poll(&h).unwrap().state, JobState::Canceled);
        // the supervisor observes the kill and frees the slot
        let h2 = b.submit(&job("w5", &[&["true"]])).unwrap();
        assert_eq!(wait_terminal(&b, &h2).state, JobState::Complete);
        assert!(t.elapsed() < Duration::from_secs(5));
        assert_eq!(b.poll(&h).unwrap().state, JobState::Canceled);
    }

    #[test]
    fn cancel_after_completion_is_not_acknowledged() {
        let (b, _d) = backend(1);
        let h = b.submit(&job("w6", &[&["true"]])).unwrap();
        wait_terminal(&b, &h);
        assert!(!b.cancel(&h).unwrap());
        assert_eq!(b.poll(&h).unwrap().state, JobState::Complete);
    }

    #[test]
    fn queued_job_cancel_never_runs() {
        let (b, d) = backend(1);
        let blocker = b.submit(&job("w7", &[&["sleep", "30"]])).unwrap();
        let mut queued = job("w8", &[&["sh", "-c", "touch /vol/ran"]]);
        queued.volumes = vec![Volume::new("/vol")];
        let h = b.submit(&queued).unwrap();
        assert_eq!(b.poll(&h).unwrap().state, JobState::Queued);
        assert!(b.cancel(&h).unwrap());
        b.cancel(&blocker).unwrap();
        thread::sleep(Duration::from_millis(200));
        assert!(!d.path().join("w8/volumes/vol/ran").exists());
    }

    #[test]
    fn workspaces_are_isolated() {
        let (b, _d) = backend(2);
        let a = b.submit(&job("wa", &[&["sh", "-c", "echo marker > /vol/m"]])).unwrap();
        wait_terminal(&b, &a);
        let bj = b
            .submit(&job("wb", &[&["sh", "-c", "test -e /vol/m && echo seen || echo absent"]]))
            .unwrap();
        assert_eq!(wait_terminal(&b, &bj).stdout, ["absent\n"]);
    }

    #[test]
    fn shared_workspace_passes_files_and_mounts_map() {
        let (b, _d) = backend(2);
        let mut w = job("shared", &[&["sh", "-c", "cp /in/x.txt /vol/a && echo done"]]);
        w.inputs = vec![MountPoint::input("k", "/in/x.txt")];
        let dir = b.workspace_dir("shared").unwrap();
        fs::create_dir_all(dir.join("in")).unwrap();
        fs::write(dir.join("in/x.txt"), "payload").unwrap();
        let h = b.submit(&w).unwrap();
        assert_eq!(wait_terminal(&b, &h).state, JobState::Complete);
        let mut next = job("shared", &[&["cat", "/vol/a"]]);
        next.executors[0].workdir = Some("/vol".into());
        let h2 = b.submit(&next).unwrap();
        assert_eq!(wait_terminal(&b, &h2).stdout, ["payload"]);
    }

    #[test]
    fn env_and_workdir_are_applied() {
        let (b, _d) = backend(1);
        let mut j = job("w9", &[&["sh", "-c", "echo $GREETING; pwd"]]);
        j.executors[0].env.insert("GREETING".into(), "hello".into());
        j.executors[0].workdir = Some("/vol/sub".into());
        let h = b.submit(&j).unwrap();
        let out = wait_terminal(&b, &h).stdout.remove(0);
        assert!(out.starts_with("hello\n"), "{out}");
        assert!(out.trim_end().ends_with("w9/volumes/vol/sub"), "{out}");
    }

    #[test]
    fn container_engine_argv() {
        let rw = PathRewriter::new("/sb", ["/vol", "/in/x"]);
        let mut e = Executor::new("alpine:3", ["cat", "/in/x"]);
        e.workdir = Some("/vol".into());
        e.env.insert("A".into(), "1".into());
        assert_eq!(
            container_argv("podman", &e, &rw),
            [
                "podman", "run", "--rm", "--network=none", "-v", "/sb/in/x:/in/x", "-v", "/sb/vol:/vol", "-w", "/vol",
                "-e", "A=1", "alpine:3", "cat", "/in/x"
            ]
        );
    }

    #[test]
    fn bounded_concurrency() {
        let (b, _d) = backend(2);
        let handles: Vec<_> = (0..5)
            .map(|i| b.submit(&job(&format!("c{i}"), &[&["sleep", "0.3"]])).unwrap())
            .collect();
        let mut peak = 0;
        let start = Instant::now();
        while start.elapsed() < Duration::from_secs(10) {
            let states: Vec<_> = handles.iter().map(|h| b.poll(h).unwrap().state).collect();
            peak = peak.max(states.iter().filter(|s| **s == JobState::Running).count());
            if states.iter().all(|s| s.is_terminal()) {
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        assert!(peak <= 2, "peak {peak}");
        assert!(handles.iter().all(|h| b.poll(h).unwrap().state == JobState::Complete));
    }
}
