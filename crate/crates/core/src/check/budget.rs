//! Register-budget accounting.
//!
//! No update may touch a register at or beyond `n + k - 1`, and an update to
//! register `n + t - 1` (t >= 1) requires the writer to have observed at
//! least `t + 1` active processes, itself included.

use super::{rules, CheckError, Verdict};
use crate::trace::{EventKind, Trace};

pub fn check_register_budget(trace: &Trace, n: usize, k: usize) -> Result<Verdict, CheckError> {
    let mut verdict = Verdict::new();
    let cap = n + k - 1;
    for e in &trace.events {
        let EventKind::UpdateApplied { index, active, .. } = &e.kind else {
            continue;
        };
        let actor = e
            .actor
            .ok_or_else(|| CheckError::Malformed(format!("seq {}: update without actor", e.seq)))?;
        if *index >= cap {
            verdict.flag(
                rules::BUDGET_CAP,
                e.seq,
                format!("{actor} updates register {index}, budget is {cap} registers"),
            );
        }
        if index + 2 > n + active {
            verdict.flag(
                rules::BUDGET_ACTIVE,
                e.seq,
                format!(
                    "{actor} updates register {index} having observed only {active} active processes (needs {})",
                    index + 2 - n
                ),
            );
        }
    }
    Ok(verdict)
}
