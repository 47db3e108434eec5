//! Structural validation of task documents.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Executor, MountDirection, MountPoint, Resources, Task, Volume};
use crate::path::{is_absolute, is_normalized, is_within, validate_key};

/// One broken invariant, naming the offending field.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

/// Returns every violated invariant of `task`, or `Ok(())` when it is well formed.
pub fn validate_task(task: &Task) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    check_body(
        &task.executors,
        &task.inputs,
        &task.outputs,
        &task.volumes,
        &task.resources,
        &mut out,
    );
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub(crate) fn check_body<'a, I>(
    executors: I,
    inputs: &[MountPoint],
    outputs: &[MountPoint],
    volumes: &[Volume],
    resources: &Resources,
    out: &mut Vec<Violation>,
) where
    I: IntoIterator<Item = &'a Executor>,
    I::IntoIter: ExactSizeIterator,
{
    let executors = executors.into_iter();
    if executors.len() == 0 {
        out.push(Violation::new("executors", "empty"));
    }
    check_volumes(volumes, out);
    check_mounts("inputs", inputs, MountDirection::Input, out);
    check_mounts("outputs", outputs, MountDirection::Output, out);
    let mount_paths: Vec<&str> = inputs
        .iter()
        .chain(outputs)
        .map(|m| m.path.as_str())
        .collect();
    for (i, ex) in executors.enumerate() {
        check_executor(&format!("executors[{i}]"), ex, volumes, &mount_paths, out);
    }
    check_resources(resources, out);
}

pub(crate) fn check_abs_path(field: &str, path: &str, out: &mut Vec<Violation>) -> bool {
    if !is_absolute(path) {
        out.push(Violation::new(field, "not absolute"));
        false
    } else if !is_normalized(path) {
        out.push(Violation::new(field, "not normalized"));
        false
    } else {
        true
    }
}

pub(crate) fn check_executor(
    prefix: &str,
    ex: &Executor,
    volumes: &[Volume],
    mount_paths: &[&str],
    out: &mut Vec<Violation>,
) {
    if ex.image.trim().is_empty() {
        out.push(Violation::new(format!("{prefix}.image"), "empty"));
    }
    if ex.command.is_empty() {
        out.push(Violation::new(format!("{prefix}.command"), "empty"));
    }
    if ex.env.keys().any(|k| k.is_empty()) {
        out.push(Violation::new(format!("{prefix}.env"), "has an empty variable name"));
    }
    if let Some(wd) = &ex.workdir {
        let field = format!("{prefix}.workdir");
        if check_abs_path(&field, wd, out) {
            let covered = volumes.iter().any(|v| is_within(wd, &v.path))
                || mount_paths.iter().any(|m| is_within(wd, m));
            if !covered {
                out.push(Violation::new(field, "not under a declared volume or mount path"));
            }
        }
    }
}

pub(crate) fn check_mounts(
    list: &str,
    mounts: &[MountPoint],
    direction: MountDirection,
    out: &mut Vec<Violation>,
) {
    let mut seen = BTreeSet::new();
    for (i, m) in mounts.iter().enumerate() {
        let prefix = format!("{list}[{i}]");
        if let Err(e) = validate_key(&m.url) {
            out.push(Violation::new(format!("{prefix}.url"), format!("invalid key: {e}")));
        }
        let path_field = format!("{prefix}.path");
        if check_abs_path(&path_field, &m.path, out) && !seen.insert(m.path.as_str()) {
            out.push(Violation::new(path_field, "duplicate"));
        }
        if m.direction.is_some_and(|d| d != direction) {
            let want = match direction {
                MountDirection::Input => "input",
                MountDirection::Output => "output",
            };
            out.push(Violation::new(
                format!("{prefix}.direction"),
                format!("must be {want}"),
            ));
        }
    }
}

pub(crate) fn check_volumes(volumes: &[Volume], out: &mut Vec<Violation>) {
    let mut ok: Vec<(usize, &str)> = Vec::new();
    for (i, v) in volumes.iter().enumerate() {
        if check_abs_path(&format!("volumes[{i}].path"), &v.path, out) {
            ok.push((i, v.path.as_str()));
        }
    }
    for (a, &(i, pi)) in ok.iter().enumerate() {
        for &(j, pj) in &ok[a + 1..] {
            if is_within(pj, pi) || is_within(pi, pj) {
                out.push(Violation::new(
                    format!("volumes[{j}].path"),
                    format!("nested with volumes[{i}].path"),
                ));
            }
        }
    }
}

pub(crate) fn check_resources(r: &Resources, out: &mut Vec<Violation>) {
    if r.cpu_cores == 0 {
        out.push(Violation::new("resources.cpu_cores", "must be positive"));
    }
    for (name, v) in [("resources.ram_gb", r.ram_gb), ("resources.disk_gb", r.disk_gb)] {
        if !(v.is_finite() && v > 0.0) {
            out.push(Violation::new(name, "must be a positive number"));
        }
    }
}

pub(crate) fn violations_to_string(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
