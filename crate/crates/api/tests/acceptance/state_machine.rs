use schema_core::ExecutionStatus::{self, *};

use crate::{collected_histories, ensure, Outcome};

const LEGAL: [(ExecutionStatus, ExecutionStatus); 10] = [
    (Submitted, Approved),
    (Submitted, Rejected),
    (Approved, Scheduled),
    (Approved, Canceled),
    (Scheduled, Running),
    (Scheduled, Error),
    (Scheduled, Canceled),
    (Running, Completed),
    (Running, Error),
    (Running, Canceled),
];

pub fn state_machine() -> Outcome {
    let mut pairs = 0;
    let mut legal = 0;
    for from in ExecutionStatus::ALL {
        for to in ExecutionStatus::ALL {
            pairs += 1;
            let expected = LEGAL.contains(&(from, to));
            ensure!(
                from.transition(to).is_ok() == expected,
                "{from:?} -> {to:?}: expected legal={expected}"
            );
            legal += expected as usize;
        }
    }
    ensure!(pairs == 64 && legal == 10, "{pairs} pairs, {legal} legal");
    let histories = collected_histories();
    let bad: Vec<_> = histories.iter().filter(|h| !h.2).collect();
    ensure!(bad.is_empty(), "illegal persisted histories: {bad:?}");
    Ok(format!(
        "64 pairs, 10 legal; {} persisted histories from other criteria all legal",
        histories.len()
    ))
}
