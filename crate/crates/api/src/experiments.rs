//! Experiments: named groups of finished executions within one context.
//!
//! Persisted experiments keep two closure properties: every participant is a
//! member of the experiment's context, and every referenced execution was
//! submitted by a participant in that context.

use std::collections::BTreeSet;
use std::sync::Arc;

use schema_core::model::experiment_key;
use schema_core::{ExecutionStatus, Experiment, ExperimentAggregates};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::clock::Clock;
use crate::directory::{Caller, Directory};
use crate::paging::{InvalidPage, Page, PageRequest};
use crate::store::{Db, Family, StoreError};

pub const MAX_NAME_LEN: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("experiment {0} already exists")]
    DuplicateName(String),
    #[error("invalid experiment name {0:?}")]
    InvalidName(String),
    #[error("{0} is not a member of the experiment's context")]
    ParticipantNotInContext(String),
    #[error("user is not a member of context {0}")]
    NotAMember(String),
    #[error("experiment {0} not found")]
    NotFound(String),
    #[error("not allowed to {0}")]
    Forbidden(&'static str),
    #[error("execution {0} not found")]
    TaskNotFound(Uuid),
    #[error("execution {0} belongs to another context")]
    TaskOutsideContext(Uuid),
    #[error("execution {0} was not submitted by a participant")]
    SubmitterNotParticipant(Uuid),
    #[error("execution {0} has not finished")]
    TaskNotTerminal(Uuid),
    #[error("participant {0} still has executions in the experiment")]
    ParticipantHasTasks(String),
    #[error(transparent)]
    InvalidPage(#[from] InvalidPage),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type ExpResult<T> = Result<T, ExpError>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewExperiment {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub participants: BTreeSet<String>,
}

/// Partial update; absent fields stay unchanged.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPatch {
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub participants: Option<BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentView {
    #[serde(flatten)]
    pub experiment: Experiment,
    pub aggregates: ExperimentAggregates,
}

/// Executions eligible for assignment have finished and produced a result.
fn assignable(status: ExecutionStatus) -> bool {
    matches!(status, ExecutionStatus::Completed | ExecutionStatus::Error)
}

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_NAME_LEN
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub struct ExperimentManager {
    db: Db,
    directory: Arc<Directory>,
    clock: Arc<dyn Clock>,
}

impl ExperimentManager {
    pub fn new(db: Db, directory: Arc<Directory>, clock: Arc<dyn Clock>) -> Self {
        ExperimentManager { db, directory, clock }
    }

    fn load(&self, owner: &str, name: &str) -> ExpResult<Experiment> {
        self.db
            .get_experiment(owner, name)?
            .ok_or_else(|| ExpError::NotFound(experiment_key(owner, name)))
    }

    fn readable(&self, caller: &Caller, owner: &str, name: &str) -> ExpResult<Experiment> {
        let exp = self.load(owner, name)?;
        if !exp.participants.contains(&caller.user) {
            return Err(ExpError::Forbidden("read this experiment"));
        }
        Ok(exp)
    }

    fn check_participants(&self, context: &str, participants: &BTreeSet<String>) -> ExpResult<()> {
        match participants.iter().find(|p| !self.directory.is_member(p, context)) {
            Some(p) => Err(ExpError::ParticipantNotInContext(p.clone())),
            None => Ok(()),
        }
    }

    pub fn create(&self, caller: &Caller, req: NewExperiment) -> ExpResult<Experiment> {
        if !valid_name(&req.name) {
            return Err(ExpError::InvalidName(req.name));
        }
        if !self.directory.is_member(&caller.user, &caller.context) {
            return Err(ExpError::NotAMember(caller.context.clone()));
        }
        let mut participants = req.participants;
        participants.insert(caller.user.clone());
        self.check_participants(&caller.context, &participants)?;
        let exp = Experiment {
            owner: caller.user.clone(),
            name: req.name,
            context_ref: caller.context.clone(),
            description: req.description,
            participants,
            task_refs: BTreeSet::new(),
            created_at: self.clock.now(),
        };
        match self.db.insert_new(Family::Experiments, &exp.key(), &exp) {
            Ok(()) => Ok(exp),
            Err(StoreError::AlreadyExists) => Err(ExpError::DuplicateName(exp.key())),
            Err(e) => Err(e.into()),
        }
    }

    /// Replaces the experiment's execution set.
    pub fn assign(&self, caller: &Caller, owner: &str, name: &str, tasks: &[Uuid]) -> ExpResult<Experiment> {
        loop {
            let exp = self.readable(caller, owner, name)?;
            for &uuid in tasks {
                let rec = self.db.get_execution(uuid)?.ok_or(ExpError::TaskNotFound(uuid))?;
                if rec.context_ref != exp.context_ref {
                    return Err(ExpError::TaskOutsideContext(uuid));
                }
                if !exp.participants.contains(&rec.submitter_ref) {
                    return Err(ExpError::SubmitterNotParticipant(uuid));
                }
                if !assignable(rec.status) {
                    return Err(ExpError::TaskNotTerminal(uuid));
                }
            }
            let wanted: BTreeSet<Uuid> = tasks.iter().copied().collect();
            let checked_against = exp.participants.clone();
            let result = self.db.update(Family::Experiments, &exp.key(), |e: &mut Experiment| {
                if e.participants != checked_against {
                    return Err(StoreError::Aborted("participants changed".into()));
                }
                e.task_refs = wanted.clone();
                Ok(())
            });
            match result {
                Ok((e, ())) => return Ok(e),
                // participants changed under us; validate again
                Err(StoreError::Aborted(_)) => continue,
                Err(StoreError::NotFound) => return Err(ExpError::NotFound(exp.key())),
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn get(&self, caller: &Caller, owner: &str, name: &str) -> ExpResult<ExperimentView> {
        let experiment = self.readable(caller, owner, name)?;
        let mut records = Vec::new();
        for &uuid in &experiment.task_refs {
            if let Some(r) = self.db.get_execution(uuid)? {
                records.push(r);
            }
        }
        Ok(ExperimentView {
            aggregates: ExperimentAggregates::compute(&records),
            experiment,
        })
    }

    pub fn tasks(&self, caller: &Caller, owner: &str, name: &str) -> ExpResult<Vec<Uuid>> {
        Ok(self.readable(caller, owner, name)?.task_refs.into_iter().collect())
    }

    /// Experiments the caller participates in, newest first.
    pub fn list(&self, caller: &Caller, page: PageRequest) -> ExpResult<Page<Experiment>> {
        let mut exps: Vec<Experiment> = self
            .db
            .list_experiments()?
            .into_iter()
            .filter(|e| e.participants.contains(&caller.user))
            .collect();
        exps.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(a.key().cmp(&b.key())));
        Ok(page.apply(exps))
    }

    pub fn update(&self, caller: &Caller, owner: &str, name: &str, patch: ExperimentPatch) -> ExpResult<Experiment> {
        loop {
            let exp = self.readable(caller, owner, name)?;
            if exp.owner != caller.user {
                return Err(ExpError::Forbidden("update an experiment owned by someone else"));
            }
            let participants = patch.participants.clone().map(|mut p| {
                p.insert(exp.owner.clone());
                p
            });
            if let Some(p) = &participants {
                self.check_participants(&exp.context_ref, p)?;
                // submitters of referenced executions must stay participants
                for uuid in &exp.task_refs {
                    if let Some(r) = self.db.get_execution(*uuid)? {
                        if !p.contains(&r.submitter_ref) {
                            return Err(ExpError::ParticipantHasTasks(r.submitter_ref));
                        }
                    }
                }
            }
            let checked_tasks = exp.task_refs.clone();
            let result = self.db.update(Family::Experiments, &exp.key(), |e: &mut Experiment| {
                if let Some(p) = &participants {
                    if e.task_refs != checked_tasks {
                        return Err(StoreError::Aborted("tasks changed".into()));
                    }
                    e.participants = p.clone();
                }
                if let Some(d) = &patch.description {
                    e.description = Some(d.clone());
                }
                Ok(())
            });
            match result {
                Ok((e, ())) => return Ok(e),
                Err(StoreError::Aborted(_)) => continue,
                Err(StoreError::NotFound) => return Err(ExpError::NotFound(exp.key())),
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn delete(&self, caller: &Caller, owner: &str, name: &str) -> ExpResult<()> {
        let exp = self.readable(caller, owner, name)?;
        if exp.owner != caller.user {
            return Err(ExpError::Forbidden("delete an experiment owned by someone else"));
        }
        if !self.db.delete(Family::Experiments, &exp.key())? {
            return Err(ExpError::NotFound(exp.key()));
        }
        Ok(())
    }
}
