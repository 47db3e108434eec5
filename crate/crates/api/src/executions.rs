//! Admission and lifecycle of task and workflow executions.
//!
//! Admission runs synchronously from SUBMITTED to SCHEDULED (or to a
//! rejection or failure). Everything after SCHEDULED is driven by
//! [`ExecutionManager::reconcile`], which polls the backend and applies status
//! changes by compare-and-set. Whoever wins the CAS into a terminal status
//! releases the quota reservation, so it is released exactly once.

use std::sync::Arc;
use std::time::Duration as StdDuration;

use chrono::Duration;
use parking_lot::Mutex;
use schema_core::{
    parse_workflow, resolve_order, validate_task, Definition, Dimension, ExecutionKind, ExecutionRecord,
    ExecutionStatus, ExecutionSummary, Failure, JobState, MountPoint, OrderError, ResourceAmounts, Task,
    TaskRequest, Violation, WorkflowJob, WorkflowSpec,
};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::backend::{BackendError, BackendJob, ExecutionBackend, JobSpec};
use crate::clock::Clock;
use crate::directory::{Caller, Directory};
use crate::files::{FilesAdapter, FilesError, LinkMethod};
use crate::paging::{InvalidPage, Page, PageRequest};
use crate::quotas::{QuotaError, QuotaManager, Reservation, ReservationToken};
use crate::store::{Db, StoreError};

/// Lifetime of links handed to backends that transfer mounts themselves.
const JOB_LINK_TTL_HOURS: i64 = 24;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("validation failed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("user is not a member of context {0}")]
    NotAMember(String),
    #[error("execution {0} not found")]
    NotFound(Uuid),
    #[error("execution {0} belongs to another context")]
    Forbidden(Uuid),
    #[error("quota exceeded in {}", dimensions.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", "))]
    QuotaExceeded { uuid: Uuid, dimensions: Vec<Dimension> },
    #[error("input object missing: {url}")]
    InputMissing { uuid: Uuid, url: String },
    #[error("{error}")]
    Backend { uuid: Uuid, error: BackendError },
    #[error("execution {0} is still being admitted")]
    Busy(Uuid),
    #[error(transparent)]
    InvalidPage(#[from] InvalidPage),
    #[error("storage: {0}")]
    Files(#[from] FilesError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type ExecResult<T> = Result<T, ExecError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ListFilter {
    pub status: Option<ExecutionStatus>,
    pub kind: Option<ExecutionKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogChannel {
    Stdout,
    Stderr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancelOutcome {
    pub record: ExecutionRecord,
    pub already_terminal: bool,
}

/// Status steps that move `from` toward the backend-reported `to`.
/// Empty when no legal forward move exists.
fn path_to(from: ExecutionStatus, to: ExecutionStatus) -> Vec<ExecutionStatus> {
    if from == to {
        Vec::new()
    } else if from.can_transition_to(to) {
        vec![to]
    } else if from == ExecutionStatus::Scheduled && ExecutionStatus::Running.can_transition_to(to) {
        vec![ExecutionStatus::Running, to]
    } else {
        Vec::new()
    }
}

fn order_violation(e: &OrderError) -> Violation {
    match e {
        OrderError::Cycle(_) => Violation::new("executors", e.to_string()),
        OrderError::UnsatisfiedRead { executor, .. } => {
            Violation::new(format!("executors.{executor}.reads"), e.to_string())
        }
    }
}

fn failure_for(state: JobState, reason: Option<String>) -> Failure {
    let code = match state {
        JobState::ExecutorError => "executor_error",
        JobState::SystemError => "system_error",
        JobState::Canceled => "canceled_by_backend",
        _ => "backend_error",
    };
    Failure::new(code, reason.unwrap_or_else(|| format!("backend reported {state}")))
}

fn padded(mut v: Vec<String>, n: usize) -> Vec<String> {
    v.resize(n, String::new());
    v
}

pub struct ExecutionManager {
    db: Db,
    directory: Arc<Directory>,
    quotas: Arc<QuotaManager>,
    files: Arc<FilesAdapter>,
    backend: Arc<dyn ExecutionBackend>,
    clock: Arc<dyn Clock>,
    sweep: Mutex<()>,
}

impl ExecutionManager {
    pub fn new(
        db: Db,
        directory: Arc<Directory>,
        quotas: Arc<QuotaManager>,
        files: Arc<FilesAdapter>,
        backend: Arc<dyn ExecutionBackend>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        ExecutionManager {
            db,
            directory,
            quotas,
            files,
            backend,
            clock,
            sweep: Mutex::new(()),
        }
    }

    pub fn backend(&self) -> &Arc<dyn ExecutionBackend> {
        &self.backend
    }

    // admission

    pub fn submit_task(&self, caller: &Caller, request: TaskRequest) -> ExecResult<ExecutionRecord> {
        self.require_member(caller)?;
        let uuid = Uuid::new_v4();
        let task = Task::from_request(request, uuid, &caller.context, &caller.user, self.clock.now());
        validate_task(&task).map_err(ExecError::Validation)?;
        let rec = ExecutionRecord::new(uuid, Definition::Task(task), &caller.context, &caller.user, self.clock.now());
        self.admit(rec)
    }

    /// Parses, checks and orders a native workflow document before admitting it.
    pub fn submit_workflow(&self, caller: &Caller, document: &str) -> ExecResult<ExecutionRecord> {
        self.require_member(caller)?;
        let spec = parse_workflow(document).map_err(|e| ExecError::Validation(e.violations()))?;
        self.submit_workflow_spec(caller, spec)
    }

    pub fn submit_workflow_spec(&self, caller: &Caller, spec: WorkflowSpec) -> ExecResult<ExecutionRecord> {
        self.require_member(caller)?;
        let violations = schema_core::workflow::check_workflow(&spec);
        if !violations.is_empty() {
            return Err(ExecError::Validation(violations));
        }
        let plan = resolve_order(&spec).map_err(|e| ExecError::Validation(vec![order_violation(&e)]))?;
        let uuid = Uuid::new_v4();
        let mut rec = ExecutionRecord::new(uuid, Definition::Workflow(spec.clone()), &caller.context, &caller.user, self.clock.now());
        rec.jobs = plan
            .stages
            .iter()
            .enumerate()
            .flat_map(|(stage, ids)| {
                ids.iter().map(move |id| WorkflowJob {
                    executor_id: id.clone(),
                    stage,
                    handle: None,
                    state: None,
                    exit_code: None,
                })
            })
            .collect();
        rec.plan = Some(plan);
        self.admit(rec)
    }

    fn require_member(&self, caller: &Caller) -> ExecResult<()> {
        if self.directory.is_member(&caller.user, &caller.context) {
            Ok(())
        } else {
            Err(ExecError::NotAMember(caller.context.clone()))
        }
    }

    fn admit(&self, rec: ExecutionRecord) -> ExecResult<ExecutionRecord> {
        use ExecutionStatus::*;
        let uuid = rec.uuid;
        self.db.put_execution(&rec)?;

        let token = match self
            .quotas
            .check_and_reserve(&rec.submitter_ref, &rec.context_ref, rec.resource_snapshot)
        {
            Ok(t) => t,
            Err(QuotaError::QuotaExceeded(dimensions)) => {
                let mut failure = Failure::new("quota_exceeded", "request exceeds the effective quota");
                failure.details = dimensions.iter().map(|d| d.as_str().to_string()).collect();
                self.db
                    .transition_execution(uuid, Submitted, &[Rejected], self.clock.now(), |r| {
                        r.error = Some(failure.clone())
                    })?;
                return Err(ExecError::QuotaExceeded { uuid, dimensions });
            }
            Err(QuotaError::NotAMember) => {
                self.db
                    .transition_execution(uuid, Submitted, &[Rejected], self.clock.now(), |r| {
                        r.error = Some(Failure::new("not_a_member", "submitter left the context"))
                    })?;
                return Err(ExecError::NotAMember(rec.context_ref.clone()));
            }
            Err(e) => return Err(ExecError::Store(StoreError::Aborted(e.to_string()))),
        };
        let rec = match self
            .db
            .transition_execution(uuid, Submitted, &[Approved], self.clock.now(), |r| r.reservation = Some(token.0))
        {
            Ok(r) => r,
            Err(e) => {
                let _ = self.quotas.release(token);
                return Err(e.into());
            }
        };

        let jobs = match self.prepare_jobs(&rec, 0) {
            Ok(jobs) => jobs,
            Err(ExecError::InputMissing { url, .. }) => {
                let mut failure = Failure::new("input_missing", format!("input object {url} does not exist"));
                failure.details = vec![url.clone()];
                self.fail_admission(&rec, failure)?;
                return Err(ExecError::InputMissing { uuid, url });
            }
            Err(e) => {
                self.fail_admission(&rec, Failure::new("staging_failed", e.to_string()))?;
                return Err(e);
            }
        };

        let mut handles = Vec::with_capacity(jobs.len());
        for (_, spec) in &jobs {
            match self.backend.submit(spec) {
                Ok(h) => handles.push(h),
                Err(error) => {
                    self.cancel_handles(&handles);
                    self.fail_admission(&rec, Failure::new(error.code(), error.to_string()))?;
                    return Err(ExecError::Backend { uuid, error });
                }
            }
        }

        let now = self.clock.now();
        let scheduled = self.db.transition_execution(uuid, Approved, &[Scheduled], now, |r| {
            r.backend_handle = handles.first().cloned();
            for ((idx, _), h) in jobs.iter().zip(&handles) {
                if let Some(j) = r.jobs.get_mut(*idx) {
                    j.handle = Some(h.clone());
                    j.state = Some(JobState::Queued);
                }
            }
        });
        match scheduled {
            Ok(r) => Ok(r),
            // canceled while being scheduled; the canceler saw no handle
            Err(StoreError::StaleWrite { .. }) => {
                self.cancel_handles(&handles);
                self.db.get_execution(uuid)?.ok_or(ExecError::NotFound(uuid))
            }
            Err(e) => {
                self.cancel_handles(&handles);
                Err(e.into())
            }
        }
    }

    /// APPROVED → SCHEDULED → ERROR for failures between reservation and
    /// backend acceptance; there is no direct APPROVED → ERROR edge.
    fn fail_admission(&self, rec: &ExecutionRecord, failure: Failure) -> ExecResult<()> {
        use ExecutionStatus::*;
        match self
            .db
            .transition_execution(rec.uuid, Approved, &[Scheduled, Error], self.clock.now(), |r| {
                r.error = Some(failure.clone())
            }) {
            Ok(done) => {
                self.after_terminal(&done);
                Ok(())
            }
            Err(StoreError::StaleWrite { .. }) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// Backend job specs for one stage (a task is a single stage-0 job),
    /// paired with their index in `rec.jobs`. Stages inputs on the first stage.
    fn prepare_jobs(&self, rec: &ExecutionRecord, stage: usize) -> ExecResult<Vec<(usize, JobSpec)>> {
        let workspace = rec.uuid.to_string();
        let inputs = match &rec.definition {
            Definition::Task(t) => &t.inputs,
            Definition::Workflow(w) => &w.inputs,
        };
        let local_dir = self.backend.workspace_dir(&workspace);
        if stage == 0 {
            match &local_dir {
                Some(dir) => {
                    self.files
                        .stage_inputs(&rec.submitter_ref, inputs, dir)
                        .map_err(|e| match e {
                            FilesError::InputMissing(url) => ExecError::InputMissing { uuid: rec.uuid, url },
                            other => other.into(),
                        })?;
                }
                None => {
                    for m in inputs {
                        match self.files.stat_object(&rec.submitter_ref, &m.url) {
                            Ok(_) => {}
                            Err(FilesError::ObjectNotFound(_)) | Err(FilesError::InvalidKey { .. }) => {
                                return Err(ExecError::InputMissing {
                                    uuid: rec.uuid,
                                    url: m.url.clone(),
                                })
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        }
        // remote backends fetch and store mounts themselves through links
        let linked = |mounts: &[MountPoint], method: LinkMethod| -> ExecResult<Vec<MountPoint>> {
            if local_dir.is_some() {
                return Ok(mounts.to_vec());
            }
            mounts
                .iter()
                .map(|m| {
                    let link = self.files.issue_link_with_ttl(
                        &rec.submitter_ref,
                        &m.url,
                        method,
                        Duration::hours(JOB_LINK_TTL_HOURS),
                    )?;
                    Ok(MountPoint {
                        url: link.url,
                        ..m.clone()
                    })
                })
                .collect()
        };

        match &rec.definition {
            Definition::Task(t) => {
                let mut spec = JobSpec::from_task(t);
                spec.inputs = linked(&t.inputs, LinkMethod::Download)?;
                spec.outputs = linked(&t.outputs, LinkMethod::Upload)?;
                Ok(vec![(0, spec)])
            }
            Definition::Workflow(w) => {
                let inputs = linked(&w.inputs, LinkMethod::Download)?;
                let all_outputs = linked(&w.outputs, LinkMethod::Upload)?;
                let mut out = Vec::new();
                for (idx, job) in rec.jobs.iter().enumerate().filter(|(_, j)| j.stage == stage) {
                    let exec = w.executor(&job.executor_id).expect("plan names declared executors");
                    // a remote job uploads only the outputs it writes itself
                    let outputs = if local_dir.is_some() {
                        all_outputs.clone()
                    } else {
                        w.outputs
                            .iter()
                            .zip(&all_outputs)
                            .filter(|(decl, _)| exec.writes.contains(&decl.path))
                            .map(|(_, linked)| linked.clone())
                            .collect()
                    };
                    out.push((
                        idx,
                        JobSpec {
                            workspace: workspace.clone(),
                            name: Some(match &w.name {
                                Some(n) => format!("{n}/{}", exec.id),
                                None => exec.id.clone(),
                            }),
                            executors: vec![exec.executor()],
                            inputs: inputs.clone(),
                            outputs,
                            volumes: w.volumes.clone(),
                            resources: w.resources,
                        },
                    ));
                }
                Ok(out)
            }
        }
    }

    fn cancel_handles(&self, handles: &[String]) {
        for h in handles {
            if let Err(e) = self.backend.cancel(h) {
                tracing::warn!(handle = %h, error = %e, "backend cancel failed");
            }
        }
    }

    /// Side effects owed by the winner of a terminal transition.
    fn after_terminal(&self, rec: &ExecutionRecord) {
        if let Some(t) = rec.reservation {
            match self.quotas.release(ReservationToken(t)) {
                Ok(()) | Err(QuotaError::AlreadyReleased) => {}
                Err(e) => tracing::warn!(uuid = %rec.uuid, error = %e, "releasing reservation"),
            }
        }
        if rec.status_history.iter().any(|e| e.status == ExecutionStatus::Scheduled) {
            self.backend.discard_workspace(&rec.uuid.to_string());
        }
    }

    // reads

    fn authorized(&self, caller: &Caller, uuid: Uuid, kind: Option<ExecutionKind>) -> ExecResult<ExecutionRecord> {
        let rec = self.db.get_execution(uuid)?.ok_or(ExecError::NotFound(uuid))?;
        if kind.is_some_and(|k| k != rec.kind) {
            return Err(ExecError::NotFound(uuid));
        }
        if rec.context_ref != caller.context {
            return Err(ExecError::Forbidden(uuid));
        }
        Ok(rec)
    }

    pub fn get(&self, caller: &Caller, uuid: Uuid, kind: Option<ExecutionKind>) -> ExecResult<ExecutionRecord> {
        self.authorized(caller, uuid, kind)
    }

    /// Newest first.
    pub fn list(&self, caller: &Caller, filter: ListFilter, page: PageRequest) -> ExecResult<Page<ExecutionSummary>> {
        let mut recs: Vec<ExecutionRecord> = self
            .db
            .list_executions()?
            .into_iter()
            .filter(|r| r.context_ref == caller.context)
            .filter(|r| filter.status.is_none_or(|s| r.status == s))
            .filter(|r| filter.kind.is_none_or(|k| r.kind == k))
            .collect();
        recs.sort_by(|a, b| b.submitted_at.cmp(&a.submitted_at).then(b.uuid.cmp(&a.uuid)));
        Ok(page.apply(recs.iter().map(ExecutionRecord::summary).collect()))
    }

    pub fn logs(
        &self,
        caller: &Caller,
        uuid: Uuid,
        kind: Option<ExecutionKind>,
        channel: LogChannel,
    ) -> ExecResult<Vec<String>> {
        let rec = self.authorized(caller, uuid, kind)?;
        Ok(match channel {
            LogChannel::Stdout => rec.stdout,
            LogChannel::Stderr => rec.stderr,
        })
    }

    // cancel

    pub fn cancel(&self, caller: &Caller, uuid: Uuid, kind: Option<ExecutionKind>) -> ExecResult<CancelOutcome> {
        for _ in 0..400 {
            let rec = self.authorized(caller, uuid, kind)?;
            if rec.status.is_terminal() {
                return Ok(CancelOutcome {
                    record: rec,
                    already_terminal: true,
                });
            }
            if !rec.status.is_cancelable() {
                // SUBMITTED lasts only for the admission call
                std::thread::sleep(StdDuration::from_millis(5));
                continue;
            }
            match self.db.transition_execution(
                uuid,
                rec.status,
                &[ExecutionStatus::Canceled],
                self.clock.now(),
                |_| {},
            ) {
                Ok(done) => {
                    let mut handles: Vec<String> = Vec::new();
                    if done.jobs.is_empty() {
                        handles.extend(done.backend_handle.clone());
                    } else {
                        handles.extend(
                            done.jobs
                                .iter()
                                .filter(|j| !j.state.is_some_and(JobState::is_terminal))
                                .filter_map(|j| j.handle.clone()),
                        );
                    }
                    self.cancel_handles(&handles);
                    self.after_terminal(&done);
                    return Ok(CancelOutcome {
                        record: done,
                        already_terminal: false,
                    });
                }
                Err(StoreError::StaleWrite { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(ExecError::Busy(uuid))
    }

    // reconciliation

    /// One sweep over SCHEDULED and RUNNING records. Returns how many changed
    /// status. Backend failures skip the record and leave it untouched.
    pub fn reconcile(&self) -> usize {
        let _sweep = self.sweep.lock();
        let records = match self.db.list_executions() {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "reconcile could not list executions");
                return 0;
            }
        };
        let mut changed = 0;
        for rec in records {
            if !matches!(rec.status, ExecutionStatus::Scheduled | ExecutionStatus::Running) {
                continue;
            }
            let uuid = rec.uuid;
            let outcome = match rec.kind {
                ExecutionKind::Task => self.reconcile_task(rec),
                ExecutionKind::Workflow => self.reconcile_workflow(rec),
            };
            match outcome {
                Ok(true) => changed += 1,
                Ok(false) => {}
                Err(e) => tracing::warn!(%uuid, error = %e, "reconcile skipped record"),
            }
        }
        changed
    }

    fn collect(&self, rec: &ExecutionRecord, outputs: &[MountPoint]) -> (Vec<String>, Vec<String>) {
        match self.backend.workspace_dir(&rec.uuid.to_string()) {
            Some(dir) => {
                let (stored, warnings) = self.files.collect_outputs(&rec.submitter_ref, outputs, &dir);
                (stored.into_iter().map(|o| o.key).collect(), warnings)
            }
            None => {
                let mut keys = Vec::new();
                let mut warnings = Vec::new();
                for m in outputs {
                    match self.files.stat_object(&rec.submitter_ref, &m.url) {
                        Ok(o) => keys.push(o.key),
                        Err(_) => warnings.push(format!("output {} was not produced", m.path)),
                    }
                }
                (keys, warnings)
            }
        }
    }

    fn commit(
        &self,
        rec: &ExecutionRecord,
        path: &[ExecutionStatus],
        mutate: impl FnMut(&mut ExecutionRecord),
    ) -> Result<bool, StoreError> {
        match self
            .db
            .transition_execution(rec.uuid, rec.status, path, self.clock.now(), mutate)
        {
            Ok(done) => {
                if done.status.is_terminal() {
                    self.after_terminal(&done);
                }
                Ok(!path.is_empty())
            }
            Err(StoreError::StaleWrite { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn reconcile_task(&self, rec: ExecutionRecord) -> Result<bool, Box<dyn std::error::Error>> {
        let n = rec.definition.executor_count();
        let Some(handle) = rec.backend_handle.clone() else {
            let f = Failure::new("missing_handle", "scheduled execution has no backend handle");
            return Ok(self.commit(&rec, &[ExecutionStatus::Error], |r| r.error = Some(f.clone()))?);
        };
        let job: BackendJob = match self.backend.poll(&handle) {
            Ok(j) => j,
            Err(e @ BackendError::UnknownHandle(_)) => {
                let f = Failure::new(e.code(), format!("backend lost the job: {e}"));
                return Ok(self.commit(&rec, &[ExecutionStatus::Error], |r| r.error = Some(f.clone()))?);
            }
            Err(e) => return Err(e.into()),
        };
        let target = job.state.to_status();
        let path = path_to(rec.status, target);
        let stdout = padded(job.stdout.clone(), n);
        let stderr = padded(job.stderr.clone(), n);
        if path.is_empty() {
            if rec.stdout != stdout || rec.stderr != stderr {
                self.commit(&rec, &[], |r| {
                    r.stdout = stdout.clone();
                    r.stderr = stderr.clone();
                })?;
            }
            return Ok(false);
        }
        let (collected, warnings) = match (&rec.definition, target) {
            (Definition::Task(t), ExecutionStatus::Completed) => self.collect(&rec, &t.outputs),
            _ => (Vec::new(), Vec::new()),
        };
        let failure = (target == ExecutionStatus::Error).then(|| failure_for(job.state, job.reason.clone()));
        Ok(self.commit(&rec, &path, |r| {
            r.stdout = stdout.clone();
            r.stderr = stderr.clone();
            r.exit_codes = job.exit_codes.clone();
            r.collected_outputs = collected.clone();
            r.warnings.extend(warnings.iter().cloned());
            if failure.is_some() {
                r.error = failure.clone();
            }
        })?)
    }

    fn reconcile_workflow(&self, rec: ExecutionRecord) -> Result<bool, Box<dyn std::error::Error>> {
        let Definition::Workflow(spec) = &rec.definition else {
            unreachable!("workflow record holds a workflow definition")
        };
        let n = rec.jobs.len();
        let mut jobs = rec.jobs.clone();
        let mut stdout = padded(rec.stdout.clone(), n);
        let mut stderr = padded(rec.stderr.clone(), n);
        let mut failure: Option<Failure> = None;

        for (i, job) in jobs.iter_mut().enumerate() {
            let Some(h) = job.handle.clone() else { continue };
            if job.state.is_some_and(JobState::is_terminal) {
                continue;
            }
            match self.backend.poll(&h) {
                Ok(bj) => {
                    job.state = Some(bj.state);
                    job.exit_code = bj.exit_codes.first().copied();
                    stdout[i] = bj.stdout.first().cloned().unwrap_or_default();
                    stderr[i] = bj.stderr.first().cloned().unwrap_or_default();
                    if matches!(bj.state, JobState::ExecutorError | JobState::SystemError | JobState::Canceled)
                        && failure.is_none()
                    {
                        let mut f = failure_for(bj.state, bj.reason.clone());
                        f.message = format!("executor {}: {}", job.executor_id, f.message);
                        failure = Some(f);
                    }
                }
                Err(e @ BackendError::UnknownHandle(_)) => {
                    job.state = Some(JobState::SystemError);
                    if failure.is_none() {
                        failure = Some(Failure::new(
                            e.code(),
                            format!("executor {}: backend lost the job", job.executor_id),
                        ));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }

        let done = |j: &WorkflowJob| j.state == Some(JobState::Complete);
        let mut submitted: Vec<String> = Vec::new();
        let mut collected = (Vec::new(), Vec::new());
        let target = if failure.is_some() {
            ExecutionStatus::Error
        } else if jobs.iter().all(done) {
            collected = self.collect(&rec, &spec.outputs);
            ExecutionStatus::Completed
        } else {
            // the lowest unfinished stage; submit it once every earlier job is done
            let stage = jobs.iter().filter(|j| !done(j)).map(|j| j.stage).min().expect("some job unfinished");
            if jobs.iter().any(|j| j.stage == stage && j.handle.is_none()) {
                let probe = ExecutionRecord {
                    jobs: jobs.clone(),
                    ..rec.clone()
                };
                for (idx, job_spec) in self.prepare_jobs(&probe, stage)? {
                    match self.backend.submit(&job_spec) {
                        Ok(h) => {
                            jobs[idx].handle = Some(h.clone());
                            jobs[idx].state = Some(JobState::Queued);
                            submitted.push(h);
                        }
                        Err(e) => {
                            failure = Some(Failure::new(
                                e.code(),
                                format!("executor {}: {e}", jobs[idx].executor_id),
                            ));
                            break;
                        }
                    }
                }
            }
            if failure.is_some() {
                ExecutionStatus::Error
            } else if jobs
                .iter()
                .any(|j| matches!(j.state, Some(JobState::Running) | Some(JobState::Complete)))
            {
                ExecutionStatus::Running
            } else {
                rec.status
            }
        };

        if target == ExecutionStatus::Error {
            let live: Vec<String> = jobs
                .iter()
                .filter(|j| !j.state.is_some_and(JobState::is_terminal))
                .filter_map(|j| j.handle.clone())
                .collect();
            self.cancel_handles(&live);
        }

        let path = path_to(rec.status, target);
        if path.is_empty() && jobs == rec.jobs && stdout == rec.stdout && stderr == rec.stderr {
            return Ok(false);
        }
        let exit_codes: Vec<i32> = jobs.iter().filter_map(|j| j.exit_code).collect();
        let (keys, warnings) = collected;
        let committed = self
            .db
            .transition_execution(rec.uuid, rec.status, &path, self.clock.now(), |r| {
                r.jobs = jobs.clone();
                r.stdout = stdout.clone();
                r.stderr = stderr.clone();
                r.exit_codes = exit_codes.clone();
                r.collected_outputs = keys.clone();
                r.warnings.extend(warnings.iter().cloned());
                if failure.is_some() {
                    r.error = failure.clone();
                }
            });
        match committed {
            Ok(done) => {
                if done.status.is_terminal() {
                    self.after_terminal(&done);
                }
                Ok(!path.is_empty())
            }
            Err(StoreError::StaleWrite { .. }) => {
                self.cancel_handles(&submitted);
                Ok(false)
            }
            Err(e) => {
                self.cancel_handles(&submitted);
                Err(e.into())
            }
        }
    }

    // startup

    /// Rebuilds the reservation ledger from persisted records and settles
    /// records whose admission was interrupted by a crash.
    pub fn recover(&self) -> ExecResult<usize> {
        use ExecutionStatus::*;
        let mut settled = 0;
        for rec in self.db.list_executions()? {
            if rec.status.is_terminal() {
                continue;
            }
            if let Some(t) = rec.reservation {
                self.quotas.restore(Reservation {
                    token: ReservationToken(t),
                    user: rec.submitter_ref.clone(),
                    context: rec.context_ref.clone(),
                    amounts: rec.resource_snapshot,
                });
            }
            let interrupted = Failure::new("admission_interrupted", "service restarted during admission");
            let path: &[ExecutionStatus] = match rec.status {
                Submitted => &[Rejected],
                Approved => &[Scheduled, Error],
                _ => continue,
            };
            if self.commit(&rec, path, |r| r.error = Some(interrupted.clone()))? {
                settled += 1;
            }
        }
        Ok(settled)
    }

    /// Sum of resource snapshots over non-terminal records holding a
    /// reservation in `context`.
    pub fn reserved_by_records(&self, context: &str) -> ExecResult<ResourceAmounts> {
        Ok(self
            .db
            .list_executions()?
            .iter()
            .filter(|r| r.context_ref == context && !r.status.is_terminal() && r.reservation.is_some())
            .map(|r| r.resource_snapshot)
            .sum())
    }
}
