use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::quota::Quota;
use crate::Timestamp;

/// One containerized job. Executors of a task run sequentially.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Executor {
    pub image: String,
    pub command: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
}

impl Executor {
    pub fn new<I, S>(image: impl Into<String>, command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Executor {
            image: image.into(),
            command: command.into_iter().map(Into::into).collect(),
            env: BTreeMap::new(),
            workdir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MountDirection {
    Input,
    Output,
}

/// Maps an object in the submitter's bucket to a path in the execution
/// workspace. `url` is a bucket-relative key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountPoint {
    pub url: String,
    pub path: String,
    /// Filled from the list the mount appears in when omitted on submission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<MountDirection>,
}

impl MountPoint {
    pub fn input(url: impl Into<String>, path: impl Into<String>) -> Self {
        MountPoint {
            url: url.into(),
            path: path.into(),
            direction: Some(MountDirection::Input),
        }
    }

    pub fn output(url: impl Into<String>, path: impl Into<String>) -> Self {
        MountPoint {
            url: url.into(),
            path: path.into(),
            direction: Some(MountDirection::Output),
        }
    }
}

/// A directory shared by all executors of one execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Volume {
    pub path: String,
}

impl Volume {
    pub fn new(path: impl Into<String>) -> Self {
        Volume { path: path.into() }
    }
}

/// Task-level resource request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resources {
    #[serde(default = "Resources::default_cpu")]
    pub cpu_cores: u32,
    #[serde(default = "Resources::default_gb")]
    pub ram_gb: f64,
    #[serde(default = "Resources::default_gb")]
    pub disk_gb: f64,
}

impl Resources {
    fn default_cpu() -> u32 {
        1
    }

    fn default_gb() -> f64 {
        1.0
    }

    pub fn new(cpu_cores: u32, ram_gb: f64, disk_gb: f64) -> Self {
        Resources {
            cpu_cores,
            ram_gb,
            disk_gb,
        }
    }
}

impl Default for Resources {
    fn default() -> Self {
        Resources::new(1, 1.0, 1.0)
    }
}

/// Body of a task submission: everything the client controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub executors: Vec<Executor>,
    #[serde(default)]
    pub inputs: Vec<MountPoint>,
    #[serde(default)]
    pub outputs: Vec<MountPoint>,
    #[serde(default)]
    pub volumes: Vec<Volume>,
    #[serde(default)]
    pub resources: Resources,
}

impl TaskRequest {
    pub fn new(executors: Vec<Executor>) -> Self {
        TaskRequest {
            name: None,
            executors,
            inputs: Vec::new(),
            outputs: Vec::new(),
            volumes: Vec::new(),
            resources: Resources::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub uuid: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub executors: Vec<Executor>,
    pub inputs: Vec<MountPoint>,
    pub outputs: Vec<MountPoint>,
    pub volumes: Vec<Volume>,
    pub resources: Resources,
    pub context_ref: String,
    pub submitter_ref: String,
    pub submitted_at: Timestamp,
    pub updated_at: Timestamp,
}

impl Task {
    /// Builds a task from a submission, filling omitted mount directions from
    /// the list each mount was declared in.
    pub fn from_request(
        request: TaskRequest,
        uuid: Uuid,
        context: impl Into<String>,
        submitter: impl Into<String>,
        now: Timestamp,
    ) -> Self {
        let TaskRequest {
            name,
            executors,
            mut inputs,
            mut outputs,
            volumes,
            resources,
        } = request;
        fill_direction(&mut inputs, MountDirection::Input);
        fill_direction(&mut outputs, MountDirection::Output);
        Task {
            uuid,
            name,
            executors,
            inputs,
            outputs,
            volumes,
            resources,
            context_ref: context.into(),
            submitter_ref: submitter.into(),
            submitted_at: now,
            updated_at: now,
        }
    }

    /// The client-controlled part, used when re-executing a task.
    pub fn to_request(&self) -> TaskRequest {
        TaskRequest {
            name: self.name.clone(),
            executors: self.executors.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            volumes: self.volumes.clone(),
            resources: self.resources,
        }
    }
}

pub(crate) fn fill_direction(mounts: &mut [MountPoint], direction: MountDirection) {
    for m in mounts {
        m.direction.get_or_insert(direction);
    }
}

/// A group of users sharing an execution space and, optionally, a quota.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub slug: String,
    #[serde(default)]
    pub members: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quota_ref: Option<Quota>,
}

impl Context {
    pub fn new(slug: impl Into<String>) -> Self {
        Context {
            slug: slug.into(),
            ..Default::default()
        }
    }

    pub fn is_member(&self, user: &str) -> bool {
        self.members.contains(user)
    }
}

/// A named, user-owned grouping of finished executions within one context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experiment {
    pub owner: String,
    pub name: String,
    pub context_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub participants: BTreeSet<String>,
    pub task_refs: BTreeSet<Uuid>,
    pub created_at: Timestamp,
}

impl Experiment {
    pub fn key(&self) -> String {
        experiment_key(&self.owner, &self.name)
    }
}

/// Storage key of an experiment. Owner names never contain `/`.
pub fn experiment_key(owner: &str, name: &str) -> String {
    let mut k = String::with_capacity(owner.len() + name.len() + 1);
    k.push_str(owner);
    k.push('/');
    k.push_str(name);
    k
}
