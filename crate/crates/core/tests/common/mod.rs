//! Shared helpers for the integration tests: fixtures, canned trace
//! mutations, and brute-force oracles written independently of the
//! checkers they are compared against.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swmr_forge::model::{ProcessId, Triple, View};
use swmr_forge::scenario::{Scenario, SchedulerSpec};
use swmr_forge::sim::value_for;
use swmr_forge::trace::{EventKind, OpKind, Trace};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&fixture(name)).expect("fixture scenario")
}

pub fn calibration() -> serde_json::Value {
    let text = std::fs::read_to_string(fixture("calibration.json")).expect("calibration fixture");
    serde_json::from_str(&text).expect("calibration json")
}

pub fn per_op_budget() -> u64 {
    calibration()["per_op_budget"].as_u64().expect("per_op_budget")
}

/// n = 4, k = 2 under the fair random scheduler; all but two processes
/// crash at step 50. The surviving pair cycles with the seed.
pub fn two_survivor_scenario(seed: u64) -> Scenario {
    let pairs = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];
    let (a, b) = pairs[(seed % 6) as usize];
    let mut s = Scenario::new(4, 2, SchedulerSpec::Random { window: 4 }, seed, 5000);
    for p in (1..=4u64).filter(|&p| p != a && p != b) {
        s.crashes.insert(ProcessId(p), 50);
    }
    s
}

/// A Write or Collect as read straight off the events.
#[derive(Debug, Clone)]
pub struct Op {
    pub actor: ProcessId,
    pub op: OpKind,
    pub begin: u64,
    pub end: Option<u64>,
    pub triple: Option<Triple>,
    pub values: Option<Vec<Triple>>,
}

/// Operations in invocation order, by linear search for each OpEnd's
/// matching OpBegin.
pub fn ops(trace: &Trace) -> Vec<Op> {
    let mut out: Vec<Op> = Vec::new();
    for e in &trace.events {
        let Some(actor) = e.actor else { continue };
        match &e.kind {
            EventKind::OpBegin { op, triple } => out.push(Op {
                actor,
                op: *op,
                begin: e.seq,
                end: None,
                triple: *triple,
                values: None,
            }),
            EventKind::OpEnd { op, values, .. } => {
                let o = out
                    .iter_mut()
                    .rev()
                    .find(|o| o.actor == actor && o.op == *op && o.end.is_none())
                    .expect("OpEnd has a matching OpBegin");
                o.end = Some(e.seq);
                o.values = values.clone();
            }
            _ => {}
        }
    }
    out
}

/// Every `(rule, Collect response seq)` the reading-map contract rejects,
/// found by brute force over all pairs of operations.
pub fn naive_pi_violations(trace: &Trace) -> BTreeSet<(&'static str, u64)> {
    let all = ops(trace);
    let mut out = BTreeSet::new();
    for c in all.iter().filter(|o| o.op == OpKind::Collect) {
        let (Some(resp), Some(values)) = (c.end, &c.values) else {
            continue;
        };
        for p in &trace.ids {
            let mine: Vec<&Triple> = values.iter().filter(|t| t.writer == *p).collect();
            if mine.len() > 1 {
                out.insert(("pi-duplicate", resp));
            }
            let writes: Vec<&Op> = all
                .iter()
                .filter(|o| o.op == OpKind::Write && o.actor == *p)
                .collect();
            let closed_before: Vec<&&Op> = writes
                .iter()
                .filter(|w| matches!(w.end, Some(e) if e < c.begin))
                .collect();
            if !closed_before.is_empty() && mine.is_empty() {
                out.insert(("pi-completeness", resp));
            }
            let last = closed_before.iter().max_by_key(|w| w.begin);
            for t in mine {
                let admissible = writes.iter().any(|w| {
                    w.triple == Some(*t)
                        && (last.is_some_and(|l| l.begin == w.begin)
                            || (w.begin <= resp && w.end.is_none_or(|e| e >= c.begin)))
                });
                if !admissible {
                    out.insert(("pi-freshness", resp));
                }
            }
        }
    }
    out
}

/// For every configuration (after event `seq`), the set of registers some
/// live process is poised on. Indexed by seq.
pub fn coverage(trace: &Trace) -> Vec<BTreeSet<usize>> {
    let mut poised: BTreeMap<ProcessId, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(trace.events.len());
    for e in &trace.events {
        match (&e.kind, e.actor) {
            (EventKind::SnapshotTaken { armed: Some(r), .. }, Some(p)) => {
                poised.insert(p, *r);
            }
            (EventKind::UpdateApplied { .. }, Some(p)) | (EventKind::Crash { .. }, Some(p)) => {
                poised.remove(&p);
            }
            _ => {}
        }
        out.push(poised.values().copied().collect());
    }
    out
}

/// Register contents after each event, by replaying updates.
pub fn contents(trace: &Trace) -> Vec<Vec<Arc<View>>> {
    let m = trace.scenario.registers();
    let mut regs = vec![Arc::new(View::new()); m];
    let mut out = Vec::with_capacity(trace.events.len());
    for e in &trace.events {
        if let EventKind::UpdateApplied { index, view, .. } = &e.kind {
            regs[*index] = view.clone();
        }
        out.push(regs.clone());
    }
    out
}

/// Replaces one returned value of a Collect with the same writer's previous
/// Write, where both Writes closed before the Collect began. Returns the
/// Collect's response seq.
pub fn mutate_stale_value(trace: &mut Trace) -> Option<u64> {
    let n = trace.scenario.n;
    let all = ops(trace);
    let pos = |p: ProcessId| trace.ids.iter().position(|&q| q == p).unwrap();
    let (resp, old, new) = all.iter().filter(|o| o.op == OpKind::Collect).find_map(|c| {
        let values = c.values.as_ref()?;
        values.iter().find_map(|t| {
            let closed = all.iter().any(|w| {
                w.op == OpKind::Write
                    && w.triple == Some(*t)
                    && w.end.is_some_and(|e| e < c.begin)
            });
            (t.counter >= 1 && closed).then(|| {
                let stale = Triple::new(value_for(n, pos(t.writer), t.counter - 1), t.writer, t.counter - 1);
                (c.end.unwrap(), *t, stale)
            })
        })
    })?;
    replace_values(trace, resp, |vals| {
        for v in vals.iter_mut() {
            if *v == old {
                *v = new;
            }
        }
    });
    Some(resp)
}

/// Drops the entry of a writer that closed a Write before the Collect
/// began. Returns the Collect's response seq.
pub fn mutate_drop_entry(trace: &mut Trace) -> Option<u64> {
    let all = ops(trace);
    let (resp, victim) = all.iter().filter(|o| o.op == OpKind::Collect).find_map(|c| {
        let values = c.values.as_ref()?;
        values.iter().find_map(|t| {
            let closed = all.iter().any(|w| {
                w.op == OpKind::Write && w.actor == t.writer && w.end.is_some_and(|e| e < c.begin)
            });
            closed.then_some((c.end.unwrap(), t.writer))
        })
    })?;
    replace_values(trace, resp, |vals| vals.retain(|t| t.writer != victim));
    Some(resp)
}

fn replace_values(trace: &mut Trace, seq: u64, f: impl FnOnce(&mut Vec<Triple>)) {
    let e = &mut trace.events[seq as usize];
    let EventKind::OpEnd {
        values: Some(vals), ..
    } = &mut e.kind
    else {
        panic!("seq {seq} is not a Collect response");
    };
    f(vals);
}

/// Finds a triple `x` sitting in register `r` at a configuration where no
/// process covers `r`, and removes `x` from the next update to `r`.
/// Returns the seq of the mutated update.
pub fn mutate_erase_uncovered(trace: &mut Trace) -> Option<u64> {
    let cov = coverage(trace);
    let regs = contents(trace);
    let events = &trace.events;
    let (target, x) = (0..events.len()).find_map(|s| {
        (0..regs[s].len()).find_map(|r| {
            if cov[s].contains(&r) {
                return None;
            }
            let x = *regs[s][r].iter().next()?;
            let next = (s + 1..events.len()).find(|&u| {
                matches!(&events[u].kind, EventKind::UpdateApplied { index, .. } if *index == r)
            })?;
            Some((next, x))
        })
    })?;
    if let EventKind::UpdateApplied { view, .. } = &mut trace.events[target].kind {
        let mut v = View::clone(view);
        assert!(v.remove(&x), "an honest update keeps uncovered content");
        *view = Arc::new(v);
    }
    trace.recompute_digests();
    Some(target as u64)
}

/// Retargets the first update whose register differs from some other
/// index to that other index.
pub fn mutate_flip_index(trace: &mut Trace) -> Option<u64> {
    let m = trace.scenario.registers();
    if m < 2 {
        return None;
    }
    let e = trace
        .events
        .iter_mut()
        .find(|e| matches!(e.kind, EventKind::UpdateApplied { .. }))?;
    if let EventKind::UpdateApplied { index, .. } = &mut e.kind {
        *index = (*index + 1) % m;
    }
    let seq = e.seq;
    trace.recompute_digests();
    Some(seq)
}

/// A random scenario and an order-preserving renaming of its ids. Scripted
/// scenarios get unbounded workloads and no crashes, so every script step
/// is applicable.
pub fn random_case(seed: u64) -> (Scenario, BTreeMap<ProcessId, ProcessId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=4);
    let k = rng.gen_range(1..=n);
    let ids: Vec<ProcessId> = (1..=n as u64).map(ProcessId).collect();
    let scheduler = match rng.gen_range(0..4) {
        0 => SchedulerSpec::RoundRobin {},
        1 => SchedulerSpec::Random {
            window: rng.gen_range(1..6),
        },
        2 => SchedulerSpec::Solo {
            process: *ids.choose(&mut rng).unwrap(),
        },
        _ => SchedulerSpec::Script {
            actors: (0..rng.gen_range(0..200))
                .map(|_| *ids.choose(&mut rng).unwrap())
                .collect(),
        },
    };
    let scripted = matches!(scheduler, SchedulerSpec::Script { .. });
    let budget = rng.gen_range(0..400);
    let mut s = Scenario::new(n, k, scheduler, rng.gen(), budget);
    if let SchedulerSpec::Script { actors } = &s.scheduler {
        s.budget = actors.len() as u64;
    }
    if !scripted {
        for p in &ids {
            if rng.gen_bool(0.3) {
                s.crashes.insert(*p, rng.gen_range(0..400));
            }
        }
        if rng.gen_bool(0.5) {
            s.workload_len = Some(rng.gen_range(1..5));
        }
    }
    let mut next = 0u64;
    let map = ids
        .iter()
        .map(|&p| {
            next += rng.gen_range(1..1000);
            (p, ProcessId(next))
        })
        .collect();
    (s, map)
}
