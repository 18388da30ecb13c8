//! Bounded exhaustive interleaving exploration for tiny instances.
//!
//! Depth-first over "which process takes the next atomic step" (snapshot
//! with arm, fire, or Collect), memoized on the full configuration. A
//! configuration first reached at depth `d` is re-expanded only when later
//! reached at a smaller depth, so every configuration within the bound is
//! expanded with its largest remaining budget.
//!
//! Checked along the way:
//! - register stability: an uncovered register keeps every triple across
//!   every enabled step;
//! - persistence: every completed Write's triple sits in some register;
//! - the reading map for every Collect step.
//!
//! Every check is a function of the configuration alone (op counters and
//! in-progress Writes carry the real-time information a Collect needs), so
//! memoization cannot hide a violation.

use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::Params;
use crate::check::{check_safety_suite, rules};
use crate::memory::occurrence_count;
use crate::model::{ProcessId, Triple};
use crate::scenario::{Scenario, ScenarioError, SchedulerSpec};
use crate::schedule::{run, RunError};
use crate::sim::{value_for, System};
use crate::trace::{EventKind, OpKind, Trace};

pub const MAX_N: usize = 3;
pub const MAX_DEPTH: usize = 20;
/// Violations kept in a report (each one is replayed to locate its seq).
pub const MAX_RECORDED: usize = 32;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("{0} (pass --override-guards to run anyway)")]
    Guard(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub threshold: usize,
    pub depth: usize,
    /// Writes per process; each is followed by one Collect.
    pub workload_len: u64,
}

impl ExploreParams {
    pub fn algo(&self) -> Params {
        Params {
            n: self.n,
            k: self.k,
            m: self.m,
            threshold: self.threshold,
        }
    }

    pub fn ids(&self) -> Vec<ProcessId> {
        (1..=self.n as u64).map(ProcessId).collect()
    }

    /// The scenario whose run replays `path`.
    pub fn scenario_for(&self, path: &[ProcessId]) -> Scenario {
        let mut s = Scenario::new(
            self.n,
            self.k,
            SchedulerSpec::Script {
                actors: path.to_vec(),
            },
            0,
            path.len() as u64,
        );
        s.m = Some(self.m);
        s.threshold = Some(self.threshold);
        s.workload_len = Some(self.workload_len);
        s
    }
}

/// FNV digest of a full configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigKey(pub u64);

pub fn config_key(sys: &System) -> ConfigKey {
    let mut h = FnvHasher::default();
    sys.hash(&mut h);
    ConfigKey(h.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoundViolation {
    /// Actor ids, one per step, from the initial configuration.
    pub path: Vec<ProcessId>,
    pub rule: String,
    /// Seq at which the offline checkers flag the replayed path.
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub params: ExploreParams,
    pub states: u64,
    pub max_depth: usize,
    pub violations_total: u64,
    pub violations: Vec<FoundViolation>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Explorer {
    bound: usize,
    memo: HashMap<System, usize>,
    path: Vec<usize>,
    max_depth: usize,
    seen: HashSet<(&'static str, ConfigKey)>,
    found: Vec<(Vec<usize>, &'static str)>,
    total: u64,
}

impl Explorer {
    fn record(&mut self, rule: &'static str, at: &System) {
        if !self.seen.insert((rule, config_key(at))) {
            return;
        }
        self.total += 1;
        if self.found.len() < MAX_RECORDED {
            self.found.push((self.path.clone(), rule));
        }
    }

    fn visit(&mut self, sys: &System, depth: usize) {
        match self.memo.get(sys) {
            Some(&d) if d <= depth => return,
            _ => {
                self.memo.insert(sys.clone(), depth);
            }
        }
        self.max_depth = self.max_depth.max(depth);
        if depth == self.bound {
            return;
        }
        for pos in sys.enabled() {
            let mut next = sys.clone();
            let events = next.step(pos).expect("enabled steps apply");
            self.path.push(pos);
            if !uncovered_registers_kept(sys, &next) {
                self.record(rules::LEMMA1, &next);
            }
            if !completed_writes_present(&next) {
                self.record(rules::LEMMA2, &next);
            }
            for rule in collect_violations(sys, pos, &events) {
                self.record(rule, &next);
            }
            self.visit(&next, depth + 1);
            self.path.pop();
        }
    }
}

fn uncovered_registers_kept(before: &System, after: &System) -> bool {
    let (b, a) = (before.mem(), after.mem());
    (0..b.len())
        .filter(|&r| !b.is_covered(r))
        .all(|r| b.register(r).iter().all(|t| a.register(r).contains(t)))
}

fn completed_writes_present(sys: &System) -> bool {
    sys.procs().iter().all(|p| {
        p.writer
            .view()
            .by_writer(p.id)
            .iter()
            .filter(|t| t.counter < p.writer.op_counter())
            .all(|t| occurrence_count(sys.mem(), t) > 0)
    })
}

/// Reading-map rules broken by a Collect step taken from `before`.
fn collect_violations(before: &System, _pos: usize, events: &[EventKind]) -> Vec<&'static str> {
    let Some(values) = events.iter().find_map(|e| match e {
        EventKind::OpEnd {
            op: OpKind::Collect,
            values,
            ..
        } => values.clone(),
        _ => None,
    }) else {
        return Vec::new();
    };
    let n = before.params().n;
    let mut out = Vec::new();
    for q in before.procs() {
        let closed = q.writer.op_counter();
        let returned: Vec<&Triple> = values.iter().filter(|t| t.writer == q.id).collect();
        if closed > 0 && returned.is_empty() {
            out.push(rules::PI_COMPLETENESS);
        }
        for t in returned {
            let last_closed = closed.checked_sub(1) == Some(t.counter);
            let concurrent = q.writer.in_progress() && t.counter == closed;
            if !(last_closed || concurrent) || t.value != value_for(n, q.position, t.counter) {
                out.push(rules::PI_FRESHNESS);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

pub fn explore(params: &ExploreParams, override_guards: bool) -> Result<Report, ExploreError> {
    if !override_guards {
        if params.n > MAX_N {
            return Err(ExploreError::Guard(format!("n = {} exceeds {MAX_N}", params.n)));
        }
        if params.depth > MAX_DEPTH {
            return Err(ExploreError::Guard(format!(
                "depth = {} exceeds {MAX_DEPTH}",
                params.depth
            )));
        }
    }
    params.scenario_for(&[]).validate()?;

    let ids = params.ids();
    let init = System::new(params.algo(), Some(params.workload_len), &ids);
    let mut ex = Explorer {
        bound: params.depth,
        memo: HashMap::new(),
        path: Vec::new(),
        max_depth: 0,
        seen: HashSet::new(),
        found: Vec::new(),
        total: 0,
    };
    ex.visit(&init, 0);

    let violations = ex
        .found
        .iter()
        .map(|(path, rule)| {
            let path: Vec<ProcessId> = path.iter().map(|&p| ids[p]).collect();
            let seq = replay(params, &path)
                .ok()
                .and_then(|t| check_safety_suite(&t).ok())
                .and_then(|v| v.first(rule).map(|v| v.seq));
            FoundViolation {
                path,
                rule: rule.to_string(),
                seq,
            }
        })
        .collect();
    Ok(Report {
        params: *params,
        states: ex.memo.len() as u64,
        max_depth: ex.max_depth,
        violations_total: ex.total,
        violations,
    })
}

/// Rebuilds the full trace of a choice sequence.
pub fn replay(params: &ExploreParams, path: &[ProcessId]) -> Result<Trace, RunError> {
    run(&params.scenario_for(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: usize, threshold: usize, depth: usize) -> ExploreParams {
        ExploreParams {
            n: 2,
            k: 1,
            m,
            threshold,
            depth,
            workload_len: 1,
        }
    }

    #[test]
    fn depth_zero_is_the_initial_configuration() {
        let r = explore(&params(2, 2, 0), false).unwrap();
        assert_eq!(r.states, 1);
        assert_eq!(r.max_depth, 0);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn guards() {
        let mut p = params(2, 2, 4);
        p.n = 5;
        p.m = 5;
        p.threshold = 5;
        assert!(matches!(explore(&p, false), Err(ExploreError::Guard(_))));
        let p = params(2, 2, 21);
        assert!(matches!(explore(&p, false), Err(ExploreError::Guard(_))));
    }

    #[test]
    fn empty_replay_is_the_initial_trace() {
        let t = replay(&params(2, 2, 0), &[]).unwrap();
        assert_eq!(t.events.len(), 2);
        assert!(t.final_mem.registers().iter().all(|r| r.is_empty()));
    }

    #[test]
    fn lost_write_found_in_under_provisioned_memory() {
        let r = explore(&params(1, 1, 14), false).unwrap();
        let v = r
            .violations
            .iter()
            .find(|v| v.rule == rules::PI_COMPLETENESS)
            .expect("a completeness violation");
        assert!(v.seq.is_some());
    }
}
