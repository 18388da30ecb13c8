//! Structural well-formedness: digests, arm/fire pairing, snapshot
//! atomicity, and single-snapshot Collects.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{op_intervals, rules, CheckError, Verdict};
use crate::memory::{digest_of_register_digests, view_digest};
use crate::model::{ProcessId, View};
use crate::trace::{EventKind, OpKind, Trace};

pub fn check_structure(trace: &Trace) -> Result<Verdict, CheckError> {
    let mut verdict = Verdict::new();
    let intervals = op_intervals(trace)?;
    let m = trace.scenario.registers();

    let empty = Arc::new(View::new());
    let mut registers: Vec<Arc<View>> = vec![empty.clone(); m];
    let mut digests: Vec<u64> = vec![view_digest(&empty); m];
    // Pending arm per process: (register, active-set size).
    let mut armed: BTreeMap<ProcessId, (usize, Option<usize>)> = BTreeMap::new();

    for e in &trace.events {
        match (&e.kind, e.actor) {
            (EventKind::SnapshotTaken { registers: snap, armed: arm, active }, Some(p)) => {
                if snap.len() != m
                    || snap
                        .iter()
                        .zip(&registers)
                        .any(|(a, b)| !Arc::ptr_eq(a, b) && **a != **b)
                {
                    verdict.flag(
                        rules::SNAPSHOT_ATOMICITY,
                        e.seq,
                        format!("{p}'s snapshot differs from the register contents at that step"),
                    );
                }
                if let Some(&(r, _)) = armed.get(&p) {
                    verdict.flag(
                        rules::ARM_MISMATCH,
                        e.seq,
                        format!("{p} takes a snapshot while poised on register {r}"),
                    );
                }
                if let Some(r) = arm {
                    if *r >= m {
                        verdict.flag(
                            rules::ARM_MISMATCH,
                            e.seq,
                            format!("{p} arms register {r} but m = {m}"),
                        );
                    }
                    armed.insert(p, (*r, *active));
                }
            }
            (EventKind::UpdateApplied { index, view, active }, Some(p)) => {
                match armed.remove(&p) {
                    Some((r, a)) if r == *index && a == Some(*active) => {}
                    Some((r, a)) => verdict.flag(
                        rules::ARM_MISMATCH,
                        e.seq,
                        format!(
                            "{p} updates register {index} (active {active}) but armed register {r} (active {a:?})"
                        ),
                    ),
                    None => verdict.flag(
                        rules::ARM_MISMATCH,
                        e.seq,
                        format!("{p} updates register {index} without being poised"),
                    ),
                }
                if *index < m {
                    registers[*index] = view.clone();
                    digests[*index] = view_digest(view);
                }
            }
            (EventKind::Crash { .. }, Some(p)) => {
                armed.remove(&p);
            }
            _ => {}
        }
        let d = digest_of_register_digests(&digests);
        if d != e.mem_digest {
            verdict.flag(
                rules::DIGEST,
                e.seq,
                format!("recorded digest {:016x}, replayed {d:016x}", e.mem_digest),
            );
        }
    }

    // Every Collect is exactly one snapshot and nothing else.
    let mut per_actor: BTreeMap<ProcessId, Vec<(u64, bool)>> = BTreeMap::new();
    for e in &trace.events {
        if let Some(p) = e.actor {
            match &e.kind {
                EventKind::SnapshotTaken { armed, .. } => {
                    per_actor.entry(p).or_default().push((e.seq, armed.is_none()))
                }
                EventKind::UpdateApplied { .. } => {
                    per_actor.entry(p).or_default().push((e.seq, false))
                }
                _ => {}
            }
        }
    }
    for iv in intervals.iter().filter(|i| i.op == OpKind::Collect) {
        let Some(end) = iv.responded else { continue };
        let steps: Vec<&(u64, bool)> = per_actor
            .get(&iv.actor)
            .map(|v| {
                v.iter()
                    .filter(|(s, _)| *s > iv.invoked && *s < end)
                    .collect()
            })
            .unwrap_or_default();
        if steps.len() != 1 || !steps[0].1 {
            verdict.flag(
                rules::COLLECT_STEPS,
                end,
                format!(
                    "{}'s Collect took {} shared steps, expected one snapshot",
                    iv.actor,
                    steps.len()
                ),
            );
        }
    }
    Ok(verdict)
}
