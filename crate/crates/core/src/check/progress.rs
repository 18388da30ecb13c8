//! Bounded proxies for the progress conditions.
//!
//! Liveness cannot be decided on a finite trace. Instead:
//! - when at most `k` processes are live after the last crash, each of them
//!   must close every Write it starts afterwards within a fixed number of
//!   its own shared steps;
//! - when more than `k` are live, at least `k` processes must close two or
//!   more Writes.
//!
//! Both only mean something under a fair schedule, so the checker first
//! verifies the trace's fairness certificate.

use std::collections::{BTreeMap, BTreeSet};

use super::{op_intervals, rules, CheckError, OpPayload, Verdict};
use crate::model::ProcessId;
use crate::trace::{EventKind, OpKind, Trace};

/// Eligible processes that neither crashed nor ran out of work.
fn live_at_end(trace: &Trace) -> BTreeSet<ProcessId> {
    let eligible: BTreeSet<ProcessId> = trace
        .scenario
        .scheduler
        .eligible()
        .unwrap_or_else(|| trace.ids.clone())
        .into_iter()
        .collect();
    let mut collects: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut crashed = BTreeSet::new();
    for e in &trace.events {
        match (&e.kind, e.actor) {
            (EventKind::OpEnd { op: OpKind::Collect, .. }, Some(p)) => {
                *collects.entry(p).or_default() += 1
            }
            (EventKind::Crash { .. }, Some(p)) => {
                crashed.insert(p);
            }
            _ => {}
        }
    }
    let finished = |p: &ProcessId| {
        trace
            .scenario
            .workload_len
            .is_some_and(|w| collects.get(p).copied().unwrap_or(0) >= w)
    };
    eligible
        .into_iter()
        .filter(|p| !crashed.contains(p) && !finished(p))
        .collect()
}

/// Verifies that every live eligible process took a shared step at least
/// once in every `n * W` consecutive shared steps.
pub fn check_fairness(trace: &Trace) -> Result<Verdict, CheckError> {
    let spec = &trace.scenario.scheduler;
    let window = spec.fairness_window().ok_or_else(|| {
        CheckError::NoFairnessCertificate(format!("scheduler {spec:?} is not fair"))
    })?;
    let bound = trace.scenario.n as u64 * window;
    let eligible: Vec<ProcessId> = spec.eligible().unwrap_or_else(|| trace.ids.clone());
    let workload = trace.scenario.workload_len;

    // Next step index each live process was expected by; None once dead.
    let mut last: BTreeMap<ProcessId, Option<u64>> =
        eligible.iter().map(|&p| (p, Some(0))).collect();
    let mut collects: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut verdict = Verdict::new();
    let mut step = 0u64;
    let gap_check = |verdict: &mut Verdict, p: ProcessId, from: u64, now: u64, seq: u64| {
        if now - from >= bound {
            verdict.flag(
                rules::FAIRNESS,
                seq,
                format!("{p} took no step in {} consecutive steps (window {bound})", now - from),
            );
        }
    };
    for e in &trace.events {
        let Some(p) = e.actor else {
            if matches!(e.kind, EventKind::End { .. }) {
                for (&q, from) in &last {
                    if let Some(from) = from {
                        gap_check(&mut verdict, q, *from, step, e.seq);
                    }
                }
            }
            continue;
        };
        let Some(entry) = last.get_mut(&p) else {
            if e.kind.is_shared_step() {
                verdict.flag(rules::FAIRNESS, e.seq, format!("{p} is not eligible but stepped"));
                step += 1;
            }
            continue;
        };
        match &e.kind {
            k if k.is_shared_step() => {
                if let Some(from) = *entry {
                    gap_check(&mut verdict, p, from, step, e.seq);
                }
                *entry = Some(step + 1);
                step += 1;
            }
            EventKind::Crash { .. } => {
                if let Some(from) = *entry {
                    gap_check(&mut verdict, p, from, step, e.seq);
                }
                *entry = None;
            }
            EventKind::OpEnd { op: OpKind::Collect, .. } => {
                let c = collects.entry(p).or_default();
                *c += 1;
                if workload.is_some_and(|w| *c >= w) {
                    *entry = None;
                }
            }
            _ => {}
        }
    }
    Ok(verdict)
}

pub fn check_progress(trace: &Trace, k: usize, per_op_budget: u64) -> Result<Verdict, CheckError> {
    let fairness = check_fairness(trace)?;
    if let Some(v) = fairness.violations.first() {
        return Err(CheckError::NoFairnessCertificate(v.witness.clone()));
    }
    let intervals = op_intervals(trace)?;
    let live = live_at_end(trace);
    let last_crash = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Crash { .. }))
        .map(|e| e.seq)
        .max()
        .unwrap_or(0);
    let end_seq = trace.events.last().map_or(0, |e| e.seq);

    let mut verdict = Verdict::new();
    if live.len() <= k {
        for w in &intervals {
            if w.op != OpKind::Write || !live.contains(&w.actor) || w.invoked <= last_crash {
                continue;
            }
            if w.own_steps > per_op_budget {
                let t = match &w.payload {
                    OpPayload::Write(t) => t.to_string(),
                    _ => String::new(),
                };
                verdict.flag(
                    rules::PROGRESS_OBSTRUCTION,
                    w.responded.unwrap_or(end_seq),
                    format!(
                        "{}'s Write {t} took {} own steps{} (budget {per_op_budget})",
                        w.actor,
                        w.own_steps,
                        if w.responded.is_none() { " and is still open" } else { "" }
                    ),
                );
            }
        }
    } else {
        let mut closed: BTreeMap<ProcessId, usize> = BTreeMap::new();
        for w in &intervals {
            if w.op == OpKind::Write && w.responded.is_some() {
                *closed.entry(w.actor).or_default() += 1;
            }
        }
        let progressing = closed.values().filter(|&&c| c >= 2).count();
        if progressing < k {
            verdict.flag(
                rules::PROGRESS_LOCK_FREE,
                end_seq,
                format!(
                    "{} processes live but only {progressing} closed two or more Writes (need {k})",
                    live.len()
                ),
            );
        }
    }
    Ok(verdict)
}
