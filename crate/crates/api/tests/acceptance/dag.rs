use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use schema_core::{resolve_order, OrderError};

use crate::oracle::{build_spec, dag_edges, inject_cycle, is_cycle, is_cyclic, plan_violations, MAX_EXECUTORS};
use crate::{ensure, Outcome};

const WORKFLOWS: usize = 200;

pub fn dag_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x05ee_dda6);
    let mut violations = Vec::new();
    let mut cycles_injected = 0;
    let mut cycles_detected = 0;
    let mut max_n = 0;
    for _ in 0..WORKFLOWS {
        let n = rng.gen_range(1..=MAX_EXECUTORS);
        max_n = max_n.max(n);
        let mut rank: Vec<usize> = (0..n).collect();
        rank.shuffle(&mut rng);
        let edges = dag_edges(n, &rank, rng.gen());
        let external: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.2)).collect();
        match resolve_order(&build_spec(n, &edges, &external)) {
            Ok(plan) => violations.extend(plan_violations(n, &edges, &plan)),
            Err(e) => violations.push(format!("acyclic workflow rejected: {e}")),
        }

        let mut cyclic = edges.clone();
        if inject_cycle(n, &mut cyclic, rng.gen()) {
            ensure!(is_cyclic(n, &cyclic), "oracle disagrees that injected edge closes a cycle");
            cycles_injected += 1;
            match resolve_order(&build_spec(n, &cyclic, &[])) {
                Err(OrderError::Cycle(ids)) if is_cycle(&ids, &cyclic) => cycles_detected += 1,
                other => violations.push(format!("injected cycle not reported correctly: {other:?}")),
            }
        }
    }
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    ensure!(cycles_injected > 0, "no cycles were injected");
    ensure!(
        cycles_detected == cycles_injected,
        "{cycles_detected}/{cycles_injected} cycles detected"
    );
    Ok(format!(
        "{WORKFLOWS} workflows (up to {max_n} executors), 0 violations; {cycles_detected}/{cycles_injected} injected cycles detected"
    ))
}
