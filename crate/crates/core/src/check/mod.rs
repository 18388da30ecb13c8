//! Trace oracles.
//!
//! Every checker is a pure function of a [`Trace`] and returns a
//! [`Verdict`]. Checkers share nothing with the simulator beyond the trace
//! format: they rebuild operation intervals and register contents from the
//! events themselves.

mod budget;
mod isomorphism;
mod persistence;
mod progress;
mod reading_map;
mod structure;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProcessId, Triple};
use crate::trace::{EventKind, OpKind, Trace};

pub use budget::check_register_budget;
pub use isomorphism::{check_isomorphism, is_order_preserving};
pub use persistence::check_persistence;
pub use progress::{check_fairness, check_progress};
pub use reading_map::check_reading_map;
pub use structure::check_structure;

pub mod rules {
    pub const PI_COMPLETENESS: &str = "pi-completeness";
    pub const PI_FRESHNESS: &str = "pi-freshness";
    pub const PI_DUPLICATE: &str = "pi-duplicate";
    pub const LEMMA1: &str = "lemma1";
    pub const LEMMA2: &str = "lemma2";
    pub const BUDGET_CAP: &str = "budget-cap";
    pub const BUDGET_ACTIVE: &str = "budget-active";
    pub const ARM_MISMATCH: &str = "arm-mismatch";
    pub const DIGEST: &str = "digest";
    pub const SNAPSHOT_ATOMICITY: &str = "snapshot-atomicity";
    pub const COLLECT_STEPS: &str = "collect-steps";
    pub const FAIRNESS: &str = "fairness";
    pub const PROGRESS_OBSTRUCTION: &str = "progress-obstruction";
    pub const PROGRESS_LOCK_FREE: &str = "progress-lock-free";
    pub const ISOMORPHISM: &str = "isomorphism";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("trace carries no fairness certificate: {0}")]
    NoFairnessCertificate(String),
    #[error("renaming is not an order-preserving injection: {0}")]
    BadRenaming(String),
    #[error("run failed: {0}")]
    Run(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub seq: u64,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl Default for Verdict {
    fn default() -> Self {
        Verdict {
            pass: true,
            violations: Vec::new(),
        }
    }
}

impl Verdict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flag(&mut self, rule: &str, seq: u64, witness: impl Into<String>) {
        self.pass = false;
        self.violations.push(Violation {
            rule: rule.to_string(),
            seq,
            witness: witness.into(),
        });
    }

    pub fn merge(&mut self, other: Verdict) {
        self.pass &= other.pass;
        self.violations.extend(other.violations);
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn first(&self, rule: &str) -> Option<&Violation> {
        self.violations.iter().find(|v| v.rule == rule)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// What an operation carried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpPayload {
    Write(Triple),
    Collect(Option<Vec<Triple>>),
}

/// One high-level operation, from invocation to response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpInterval {
    pub actor: ProcessId,
    pub op: OpKind,
    pub invoked: u64,
    pub responded: Option<u64>,
    pub payload: OpPayload,
    /// Shared-memory steps the actor took inside this operation.
    pub own_steps: u64,
}

/// Rebuilds operation intervals. A process has at most one open Write and
/// one open Collect at any time; a Collect may sit inside the process's own
/// Write.
pub fn op_intervals(trace: &Trace) -> Result<Vec<OpInterval>, CheckError> {
    let known = |p: ProcessId| trace.ids.contains(&p);
    let mut out: Vec<OpInterval> = Vec::new();
    let mut open: BTreeMap<(ProcessId, OpKind), usize> = BTreeMap::new();
    let mut last_seq = None;
    for e in &trace.events {
        if let Some(prev) = last_seq {
            if e.seq != prev + 1 {
                return Err(CheckError::Malformed(format!(
                    "seq {} follows {prev}",
                    e.seq
                )));
            }
        } else if e.seq != 0 {
            return Err(CheckError::Malformed("seq does not start at 0".into()));
        }
        last_seq = Some(e.seq);
        let actor = match (e.actor, &e.kind) {
            (None, EventKind::Start { .. } | EventKind::End { .. }) => continue,
            (Some(a), _) if known(a) => a,
            (a, _) => {
                return Err(CheckError::Malformed(format!(
                    "seq {}: unknown actor {a:?}",
                    e.seq
                )))
            }
        };
        match &e.kind {
            EventKind::OpBegin { op, triple } => {
                if open.contains_key(&(actor, *op)) {
                    return Err(CheckError::Malformed(format!(
                        "seq {}: {actor} begins a {op:?} while one is open",
                        e.seq
                    )));
                }
                let payload = match (op, triple) {
                    (OpKind::Write, Some(t)) => OpPayload::Write(*t),
                    (OpKind::Collect, None) => OpPayload::Collect(None),
                    _ => {
                        return Err(CheckError::Malformed(format!(
                            "seq {}: bad OpBegin payload",
                            e.seq
                        )))
                    }
                };
                open.insert((actor, *op), out.len());
                out.push(OpInterval {
                    actor,
                    op: *op,
                    invoked: e.seq,
                    responded: None,
                    payload,
                    own_steps: 0,
                });
            }
            EventKind::OpEnd { op, values, .. } => {
                let idx = open.remove(&(actor, *op)).ok_or_else(|| {
                    CheckError::Malformed(format!("seq {}: {actor} ends an unopened {op:?}", e.seq))
                })?;
                out[idx].responded = Some(e.seq);
                if *op == OpKind::Collect {
                    out[idx].payload = OpPayload::Collect(values.clone());
                }
            }
            EventKind::SnapshotTaken { armed, .. } => {
                // A snapshot without an armed update belongs to a Collect.
                let kind = if armed.is_some() {
                    OpKind::Write
                } else {
                    OpKind::Collect
                };
                if let Some(&idx) = open.get(&(actor, kind)) {
                    out[idx].own_steps += 1;
                }
            }
            EventKind::UpdateApplied { .. } => {
                if let Some(&idx) = open.get(&(actor, OpKind::Write)) {
                    out[idx].own_steps += 1;
                }
            }
            EventKind::Crash { .. } => {
                open.retain(|(p, _), _| *p != actor);
            }
            EventKind::Start { .. } | EventKind::End { .. } => {
                return Err(CheckError::Malformed(format!(
                    "seq {}: Start/End carry an actor",
                    e.seq
                )))
            }
        }
    }
    Ok(out)
}

/// Runs every safety-side checker: structure, reading map, persistence and
/// register budget.
pub fn check_safety_suite(trace: &Trace) -> Result<Verdict, CheckError> {
    let mut v = check_structure(trace)?;
    v.merge(check_reading_map(trace)?);
    v.merge(check_persistence(trace)?);
    v.merge(check_register_budget(trace, trace.scenario.n, trace.scenario.k)?);
    Ok(v)
}
