//! Brute-force oracle for workflow ordering. Independent of the library's
//! graph code: edges come straight from the generator, and valid orders are
//! found by enumerating every permutation.

#![allow(dead_code)]

use schema_core::{ExecutionPlan, MountPoint, Volume, WorkflowExecutor, WorkflowSpec};

pub const MAX_EXECUTORS: usize = 8;

pub fn id(i: usize) -> String {
    format!("E{i}")
}

fn output_of(i: usize) -> String {
    format!("/vol/w/{i}")
}

/// Workflow over executors `E0..E{n-1}` where `b` reads what `a` writes for
/// every edge `(a, b)`. `external` executors additionally read a workflow input.
pub fn build_spec(n: usize, edges: &[(usize, usize)], external: &[usize]) -> WorkflowSpec {
    let executors = (0..n)
        .map(|k| {
            let mut reads: Vec<String> = edges.iter().filter(|e| e.1 == k).map(|e| output_of(e.0)).collect();
            if external.contains(&k) {
                reads.push("/vol/in/data".into());
            }
            WorkflowExecutor::new(id(k), "alpine", ["true"])
                .reading(reads)
                .writing([output_of(k)])
        })
        .collect();
    WorkflowSpec {
        name: Some("oracle".into()),
        executors,
        inputs: if external.is_empty() {
            vec![]
        } else {
            vec![MountPoint::input("data.txt", "/vol/in/data")]
        },
        outputs: vec![],
        volumes: vec![Volume::new("/vol")],
        resources: Default::default(),
    }
}

/// All permutations of `0..n`, by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

fn respects(order: &[usize], edges: &[(usize, usize)]) -> bool {
    let mut pos = vec![0usize; order.len()];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    edges.iter().all(|&(a, b)| a == b || pos[a] < pos[b])
}

/// Every permutation that puts each writer before its readers.
pub fn topological_orders(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    permutations(n).into_iter().filter(|p| respects(p, edges)).collect()
}

pub fn is_cyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    !permutations(n).iter().any(|p| respects(p, edges))
}

/// Longest chain of edges ending at `v`.
fn depth(v: usize, edges: &[(usize, usize)]) -> usize {
    edges
        .iter()
        .filter(|e| e.1 == v && e.0 != v)
        .map(|e| depth(e.0, edges) + 1)
        .max()
        .unwrap_or(0)
}

/// Violations of the plan contract for an acyclic edge set.
pub fn plan_violations(n: usize, edges: &[(usize, usize)], plan: &ExecutionPlan) -> Vec<String> {
    let mut v = Vec::new();
    let index = |s: &str| s.strip_prefix('E').and_then(|d| d.parse::<usize>().ok());
    let lin: Vec<Option<usize>> = plan.linearize().into_iter().map(index).collect();
    if lin.iter().any(Option::is_none) {
        v.push(format!("unknown id in plan {plan}"));
        return v;
    }
    let lin: Vec<usize> = lin.into_iter().flatten().collect();
    let mut sorted = lin.clone();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        v.push(format!("plan {plan} does not list each executor exactly once"));
        return v;
    }
    if !topological_orders(n, edges).contains(&lin) {
        v.push(format!("linearization of {plan} is not a topological order"));
    }
    for (s, stage) in plan.stages.iter().enumerate() {
        let idx: Vec<usize> = stage.iter().filter_map(|x| index(x)).collect();
        if idx.windows(2).any(|w| w[0] > w[1]) {
            v.push(format!("stage {s} of {plan} not in declaration order"));
        }
        for &e in &idx {
            if depth(e, edges) != s {
                v.push(format!("{} placed in stage {s}, earliest possible is {}", id(e), depth(e, edges)));
            }
        }
    }
    v
}

/// Whether `ids` names a closed walk in the edge set.
pub fn is_cycle(ids: &[String], edges: &[(usize, usize)]) -> bool {
    let idx: Option<Vec<usize>> = ids
        .iter()
        .map(|s| s.strip_prefix('E').and_then(|d| d.parse().ok()))
        .collect();
    let Some(idx) = idx else { return false };
    !idx.is_empty()
        && (0..idx.len()).all(|i| {
            let (a, b) = (idx[i], idx[(i + 1) % idx.len()]);
            edges.contains(&(a, b))
        })
}

/// Edge set of a random DAG: vertices are ranked by `rank`, and `bits` picks
/// which forward pairs become edges. Declaration order stays independent of
/// the rank, so edges point both ways in declaration index.
pub fn dag_edges(n: usize, rank: &[usize], bits: u64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let mut bit = 0;
    for i in 0..n {
        for j in 0..n {
            if rank[i] < rank[j] {
                if bits >> (bit % 64) & 1 == 1 {
                    edges.push((i, j));
                }
                bit += 1;
            }
        }
    }
    edges
}

/// Adds an edge from some vertex reachable from `u` back to `u`.
pub fn inject_cycle(n: usize, edges: &mut Vec<(usize, usize)>, pick: usize) -> bool {
    let reach = |from: usize, edges: &[(usize, usize)]| {
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        while let Some(x) = stack.pop() {
            for &(a, b) in edges {
                if a == x && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen
    };
    let mut pairs = Vec::new();
    for u in 0..n {
        for (v, r) in reach(u, edges).into_iter().enumerate() {
            if r && v != u {
                pairs.push((v, u));
            }
        }
    }
    if pairs.is_empty() {
        return false;
    }
    edges.push(pairs[pick % pairs.len()]);
    true
}
