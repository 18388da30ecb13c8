//! Step events, traces and their JSON Lines encoding.
//!
//! A trace file holds one JSON object per line with the fields
//! `seq, actor, kind, payload, mem_digest`. The first line is a `Start`
//! record carrying the scenario and participant ids; the last is an `End`
//! record with the run outcome. Every line in between is one event of one
//! process. `mem_digest` is the register-array digest after the event, as
//! 16 hex digits.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::memory::{digest_of_register_digests, view_digest, MemoryState};
use crate::model::{ProcessId, Triple, View};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Write,
    Collect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    BudgetExhausted,
    AllDone,
    AllCrashed,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    Start {
        scenario: Scenario,
        ids: Vec<ProcessId>,
    },
    OpBegin {
        op: OpKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        triple: Option<Triple>,
    },
    SnapshotTaken {
        registers: Vec<Arc<View>>,
        /// Register the snapshot armed an update to (Write snapshots only).
        armed: Option<usize>,
        /// Size of the writer's active set after the snapshot.
        active: Option<usize>,
    },
    UpdateApplied {
        index: usize,
        view: Arc<View>,
        active: usize,
    },
    OpEnd {
        op: OpKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        triple: Option<Triple>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<Triple>>,
    },
    Crash {
        discarded: Option<usize>,
    },
    End {
        outcome: Outcome,
        steps: u64,
    },
}

impl EventKind {
    /// Snapshots and updates; everything else is bookkeeping.
    pub fn is_shared_step(&self) -> bool {
        matches!(
            self,
            EventKind::SnapshotTaken { .. } | EventKind::UpdateApplied { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub seq: u64,
    pub actor: Option<ProcessId>,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(serialize_with = "ser_digest", deserialize_with = "de_digest")]
    pub mem_digest: u64,
}

fn ser_digest<S: Serializer>(d: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{d:016x}"))
}

fn de_digest<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub scenario: Scenario,
    pub ids: Vec<ProcessId>,
    pub events: Vec<StepEvent>,
    /// Registers after the last event.
    pub final_mem: MemoryState,
    /// Processes still poised at the end, with their target register.
    pub final_poised: BTreeMap<ProcessId, usize>,
}

impl Trace {
    pub fn outcome(&self) -> Option<(Outcome, u64)> {
        match self.events.last().map(|e| &e.kind) {
            Some(EventKind::End { outcome, steps }) => Some((*outcome, *steps)),
            _ => None,
        }
    }

    /// Number of snapshot and update events.
    pub fn shared_steps(&self) -> u64 {
        self.events.iter().filter(|e| e.kind.is_shared_step()).count() as u64
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: StepEvent =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            events.push(e);
        }
        Trace::from_events(events)
    }

    pub fn from_events(events: Vec<StepEvent>) -> Result<Trace, TraceError> {
        let (scenario, ids) = match events.first().map(|e| &e.kind) {
            Some(EventKind::Start { scenario, ids }) => (scenario.clone(), ids.clone()),
            _ => return Err(TraceError::Malformed("first event must be Start".into())),
        };
        let mut scenario = scenario;
        scenario.ids = Some(ids.clone());
        let Replayed { mem, poised } = replay_memory(&events, scenario.registers())?;
        Ok(Trace {
            scenario,
            ids,
            events,
            final_mem: mem,
            final_poised: poised,
        })
    }

    /// Applies an id substitution to every actor, triple and scenario
    /// reference, then recomputes the memory digests.
    pub fn renamed(&self, map: &BTreeMap<ProcessId, ProcessId>) -> Trace {
        let r = |p: &ProcessId| *map.get(p).unwrap_or(p);
        let rt = |t: &Triple| Triple::new(t.value, r(&t.writer), t.counter);
        let rv = |v: &View| v.iter().map(rt).collect::<View>();
        let scenario = rename_scenario(&self.scenario, map);
        let ids: Vec<ProcessId> = self.ids.iter().map(r).collect();
        let events = self
            .events
            .iter()
            .map(|e| {
                let kind = match &e.kind {
                    EventKind::Start { .. } => EventKind::Start {
                        scenario: scenario_for_file(&scenario),
                        ids: ids.clone(),
                    },
                    EventKind::OpBegin { op, triple } => EventKind::OpBegin {
                        op: *op,
                        triple: triple.as_ref().map(rt),
                    },
                    EventKind::SnapshotTaken {
                        registers,
                        armed,
                        active,
                    } => EventKind::SnapshotTaken {
                        registers: registers.iter().map(|v| Arc::new(rv(v))).collect(),
                        armed: *armed,
                        active: *active,
                    },
                    EventKind::UpdateApplied {
                        index,
                        view,
                        active,
                    } => EventKind::UpdateApplied {
                        index: *index,
                        view: Arc::new(rv(view)),
                        active: *active,
                    },
                    EventKind::OpEnd { op, triple, values } => EventKind::OpEnd {
                        op: *op,
                        triple: triple.as_ref().map(rt),
                        values: values.as_ref().map(|vs| {
                            let mut vs: Vec<Triple> = vs.iter().map(rt).collect();
                            vs.sort();
                            vs
                        }),
                    },
                    other => other.clone(),
                };
                StepEvent {
                    seq: e.seq,
                    actor: e.actor.as_ref().map(r),
                    kind,
                    mem_digest: e.mem_digest,
                }
            })
            .collect();
        let mut t = Trace::from_events(events).expect("renaming preserves structure");
        t.recompute_digests();
        t
    }

    /// Rewrites every `mem_digest` from the update events.
    pub fn recompute_digests(&mut self) {
        let m = self.scenario.registers();
        let mut digests = vec![view_digest(&View::new()); m];
        for e in &mut self.events {
            if let EventKind::UpdateApplied { index, view, .. } = &e.kind {
                if *index < m {
                    digests[*index] = view_digest(view);
                }
            }
            e.mem_digest = digest_of_register_digests(&digests);
        }
    }
}

/// Start records store the scenario without the internal id list.
pub(crate) fn scenario_for_file(s: &Scenario) -> Scenario {
    let mut s = s.clone();
    s.ids = None;
    s
}

pub fn rename_scenario(s: &Scenario, map: &BTreeMap<ProcessId, ProcessId>) -> Scenario {
    use crate::scenario::SchedulerSpec as S;
    let r = |p: &ProcessId| *map.get(p).unwrap_or(p);
    let mut out = s.clone();
    out.ids = Some(s.process_ids().iter().map(r).collect());
    out.crashes = s.crashes.iter().map(|(p, c)| (r(p), *c)).collect();
    out.scheduler = match &s.scheduler {
        S::Solo { process } => S::Solo { process: r(process) },
        S::Script { actors } => S::Script {
            actors: actors.iter().map(r).collect(),
        },
        S::Covering { victim } => S::Covering { victim: r(victim) },
        other => other.clone(),
    };
    out
}

/// Register contents and poised targets rebuilt from a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replayed {
    pub mem: MemoryState,
    pub poised: BTreeMap<ProcessId, usize>,
}

/// Rebuilds the registers by replaying updates, and the poised set by
/// replaying arms, fires and crashes. Armed views of unfired updates are not
/// recorded in traces, so `mem` carries no pending steps.
pub fn replay_memory(events: &[StepEvent], m: usize) -> Result<Replayed, TraceError> {
    let mut mem = MemoryState::new(m);
    let mut armed: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for e in events {
        match (&e.kind, e.actor) {
            (EventKind::SnapshotTaken { armed: Some(i), .. }, Some(p)) => {
                armed.insert(p, *i);
            }
            (EventKind::UpdateApplied { index, view, .. }, Some(p)) => {
                if *index >= m {
                    return Err(TraceError::Malformed(format!(
                        "seq {}: update index {index} out of range (m = {m})",
                        e.seq
                    )));
                }
                armed.remove(&p);
                mem.set_register(*index, (**view).clone());
            }
            (EventKind::Crash { .. }, Some(p)) => {
                armed.remove(&p);
            }
            _ => {}
        }
    }
    Ok(Replayed { mem, poised: armed })
}
