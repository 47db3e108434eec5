//! Native workflow documents and executor ordering.
//!
//! A workflow is a task whose executors additionally declare an `id` and the
//! workspace paths they `reads` and `writes`. Executor B depends on executor A
//! when B reads a path A writes. The resolver groups executors into stages:
//! each executor is placed one stage after the latest stage among its
//! dependencies, and executors sharing a stage are ordered by declaration.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{fill_direction, Executor, MountDirection, MountPoint, Resources, Volume};
use crate::path::is_within;
use crate::validate::{self, check_abs_path, Violation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowExecutor {
    pub id: String,
    pub image: String,
    pub command: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    #[serde(default)]
    pub reads: Vec<String>,
    #[serde(default)]
    pub writes: Vec<String>,
}

impl WorkflowExecutor {
    pub fn new<I, S>(id: impl Into<String>, image: impl Into<String>, command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WorkflowExecutor {
            id: id.into(),
            image: image.into(),
            command: command.into_iter().map(Into::into).collect(),
            env: BTreeMap::new(),
            workdir: None,
            reads: Vec::new(),
            writes: Vec::new(),
        }
    }

    pub fn reading<I: IntoIterator<Item = S>, S: Into<String>>(mut self, paths: I) -> Self {
        self.reads.extend(paths.into_iter().map(Into::into));
        self
    }

    pub fn writing<I: IntoIterator<Item = S>, S: Into<String>>(mut self, paths: I) -> Self {
        self.writes.extend(paths.into_iter().map(Into::into));
        self
    }

    /// The plain executor carried to a backend.
    pub fn executor(&self) -> Executor {
        Executor {
            image: self.image.clone(),
            command: self.command.clone(),
            env: self.env.clone(),
            workdir: self.workdir.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub executors: Vec<WorkflowExecutor>,
    #[serde(default)]
    pub inputs: Vec<MountPoint>,
    #[serde(default)]
    pub outputs: Vec<MountPoint>,
    #[serde(default)]
    pub volumes: Vec<Volume>,
    #[serde(default)]
    pub resources: Resources,
}

impl WorkflowSpec {
    pub fn executor(&self, id: &str) -> Option<&WorkflowExecutor> {
        self.executors.iter().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("workflow serializes")
    }
}

/// Executor ids grouped into stages; members of a stage may run concurrently.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub stages: Vec<Vec<String>>,
}

impl ExecutionPlan {
    /// Stage order, then in-stage order.
    pub fn linearize(&self) -> Vec<&str> {
        self.stages
            .iter()
            .flat_map(|s| s.iter().map(String::as_str))
            .collect()
    }

    pub fn stage_of(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.iter().any(|x| x == id))
    }

    pub fn len(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line} column {column}: {reason}")]
    Syntax {
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("{}", validate::violations_to_string(.0))]
    Schema(Vec<Violation>),
}

impl ParseError {
    pub fn location(&self) -> String {
        match self {
            ParseError::Syntax { line, column, .. } => format!("line {line} column {column}"),
            ParseError::Schema(v) => v.first().map(|v| v.field.clone()).unwrap_or_default(),
        }
    }

    pub fn reason(&self) -> String {
        match self {
            ParseError::Syntax { reason, .. } => reason.clone(),
            ParseError::Schema(v) => v.first().map(|v| v.message.clone()).unwrap_or_default(),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        match self {
            ParseError::Syntax { .. } => vec![Violation::new(self.location(), self.reason())],
            ParseError::Schema(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OrderError {
    #[error("dependency cycle through executors {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("executor {executor} reads {path}, which no executor writes and no input provides")]
    UnsatisfiedRead { executor: String, path: String },
}

/// Parses and checks a workflow document. Acyclicity is left to
/// [`resolve_order`].
pub fn parse_workflow(document: &str) -> Result<WorkflowSpec, ParseError> {
    let mut spec: WorkflowSpec =
        serde_json::from_str(document).map_err(|e| ParseError::Syntax {
            line: e.line(),
            column: e.column(),
            reason: e.to_string(),
        })?;
    fill_direction(&mut spec.inputs, MountDirection::Input);
    fill_direction(&mut spec.outputs, MountDirection::Output);
    let violations = check_workflow(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(ParseError::Schema(violations))
    }
}

/// Every workflow invariant except acyclicity.
pub fn check_workflow(spec: &WorkflowSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let plain: Vec<Executor> = spec.executors.iter().map(WorkflowExecutor::executor).collect();
    validate::check_body(
        &plain,
        &spec.inputs,
        &spec.outputs,
        &spec.volumes,
        &spec.resources,
        &mut out,
    );

    let mut ids = BTreeSet::new();
    let mut writers: BTreeMap<&str, &str> = BTreeMap::new();
    for (i, ex) in spec.executors.iter().enumerate() {
        let prefix = format!("executors[{i}]");
        if ex.id.trim().is_empty() {
            out.push(Violation::new(format!("{prefix}.id"), "empty"));
        } else if !ids.insert(ex.id.as_str()) {
            out.push(Violation::new(format!("{prefix}.id"), format!("duplicate id {}", ex.id)));
        }
        for (list, paths) in [("reads", &ex.reads), ("writes", &ex.writes)] {
            for (k, p) in paths.iter().enumerate() {
                let field = format!("{prefix}.{list}[{k}]");
                if check_abs_path(&field, p, &mut out)
                    && !spec.volumes.iter().any(|v| is_within(p, &v.path))
                {
                    out.push(Violation::new(field, "not under a declared volume"));
                }
            }
        }
        for (k, p) in ex.writes.iter().enumerate() {
            if let Some(prev) = writers.insert(p.as_str(), ex.id.as_str()) {
                out.push(Violation::new(
                    format!("{prefix}.writes[{k}]"),
                    format!("duplicate writer of {p} (also written by {prev})"),
                ));
            }
        }
    }

    for (i, o) in spec.outputs.iter().enumerate() {
        let produced = writers.contains_key(o.path.as_str())
            || spec.inputs.iter().any(|m| m.path == o.path);
        if !produced {
            out.push(Violation::new(
                format!("outputs[{i}].path"),
                "not written by any executor nor provided by an input",
            ));
        }
    }
    out
}

/// Dependency edges `(from, to)` as declaration indices: `to` reads a path
/// that `from` writes. Self edges are dropped.
pub fn dependency_edges(spec: &WorkflowSpec) -> Vec<(usize, usize)> {
    let mut writer_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, ex) in spec.executors.iter().enumerate() {
        for p in &ex.writes {
            writer_of.entry(p.as_str()).or_insert(i);
        }
    }
    let mut edges = BTreeSet::new();
    for (b, ex) in spec.executors.iter().enumerate() {
        for r in &ex.reads {
            if let Some(&a) = writer_of.get(r.as_str()) {
                if a != b {
                    edges.insert((a, b));
                }
            }
        }
    }
    edges.into_iter().collect()
}

/// Resolves a staged execution order for a parsed workflow.
pub fn resolve_order(spec: &WorkflowSpec) -> Result<ExecutionPlan, OrderError> {
    let written: BTreeSet<&str> = spec
        .executors
        .iter()
        .flat_map(|e| e.writes.iter().map(String::as_str))
        .collect();
    for ex in &spec.executors {
        for r in &ex.reads {
            let provided =
                written.contains(r.as_str()) || spec.inputs.iter().any(|m| &m.path == r);
            if !provided {
                return Err(OrderError::UnsatisfiedRead {
                    executor: ex.id.clone(),
                    path: r.clone(),
                });
            }
        }
    }

    let n = spec.executors.len();
    let edges = dependency_edges(spec);
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for &(a, b) in &edges {
        succ[a].push(b);
        pred[b].push(a);
        indeg[b] += 1;
    }

    let mut level = vec![0usize; n];
    let mut done = vec![false; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut processed = 0;
    while let Some(a) = frontier.pop() {
        done[a] = true;
        processed += 1;
        for &b in &succ[a] {
            level[b] = level[b].max(level[a] + 1);
            indeg[b] -= 1;
            if indeg[b] == 0 {
                frontier.push(b);
            }
        }
    }

    if processed < n {
        return Err(OrderError::Cycle(find_cycle(spec, &pred, &done)));
    }

    let depth = level.iter().copied().max().map_or(0, |m| m + 1);
    let mut stages = vec![Vec::new(); depth];
    // indices ascend, so each stage keeps declaration order
    for (i, ex) in spec.executors.iter().enumerate() {
        stages[level[i]].push(ex.id.clone());
    }
    Ok(ExecutionPlan { stages })
}

/// Walks predecessor links among unprocessed nodes until one repeats. Every
/// unprocessed node has an unprocessed predecessor, so the walk always closes.
fn find_cycle(spec: &WorkflowSpec, pred: &[Vec<usize>], done: &[bool]) -> Vec<String> {
    let start = done.iter().position(|d| !d).expect("cycle exists");
    let mut seen_at = BTreeMap::new();
    let mut walk = Vec::new();
    let mut cur = start;
    while !seen_at.contains_key(&cur) {
        seen_at.insert(cur, walk.len());
        walk.push(cur);
        cur = *pred[cur]
            .iter()
            .filter(|&&p| !done[p])
            .min()
            .expect("unprocessed node has an unprocessed predecessor");
    }
    // walk[first..] goes backwards along edges
    let first = seen_at[&cur];
    let mut cycle: Vec<usize> = walk[first..].iter().rev().copied().collect();
    let min_pos = cycle
        .iter()
        .enumerate()
        .min_by_key(|(_, &v)| v)
        .map(|(i, _)| i)
        .unwrap_or(0);
    cycle.rotate_left(min_pos);
    cycle
        .into_iter()
        .map(|i| spec.executors[i].id.clone())
        .collect()
}

impl fmt::Display for ExecutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "[{}]", s.join(","))?;
        }
        f.write_str("]")
    }
}
