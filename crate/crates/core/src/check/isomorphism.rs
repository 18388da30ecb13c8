//! Comparison-based behavior: renaming ids by an order-preserving injection
//! must rename the trace and change nothing else.

use std::collections::BTreeMap;

use super::{rules, CheckError, Verdict};
use crate::model::ProcessId;
use crate::scenario::Scenario;
use crate::schedule::run;
use crate::trace::rename_scenario;

/// True iff `map` is defined on every id, maps to positive ids, and is
/// strictly increasing on them.
pub fn is_order_preserving(ids: &[ProcessId], map: &BTreeMap<ProcessId, ProcessId>) -> bool {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let image: Option<Vec<ProcessId>> = sorted.iter().map(|p| map.get(p).copied()).collect();
    match image {
        Some(img) => img.iter().all(|p| p.0 > 0) && img.windows(2).all(|w| w[0] < w[1]),
        None => false,
    }
}

pub fn check_isomorphism(
    scenario: &Scenario,
    renaming: &BTreeMap<ProcessId, ProcessId>,
) -> Result<Verdict, CheckError> {
    let ids = scenario.process_ids();
    if !is_order_preserving(&ids, renaming) {
        return Err(CheckError::BadRenaming(format!("{renaming:?} on {ids:?}")));
    }
    let original = run(scenario).map_err(|e| CheckError::Run(e.to_string()))?;
    let renamed_scenario = rename_scenario(scenario, renaming);
    let renamed_run = run(&renamed_scenario).map_err(|e| CheckError::Run(e.to_string()))?;

    let expected = original.renamed(renaming).to_jsonl();
    let actual = renamed_run.to_jsonl();
    let mut verdict = Verdict::new();
    if expected != actual {
        let (line, (a, b)) = expected
            .lines()
            .zip(actual.lines())
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .unwrap_or((
                expected.lines().count().min(actual.lines().count()),
                ("<end>", "<end>"),
            ));
        verdict.flag(
            rules::ISOMORPHISM,
            line as u64,
            format!("renamed original: {a}\nrenamed run:      {b}"),
        );
    }
    Ok(verdict)
}
