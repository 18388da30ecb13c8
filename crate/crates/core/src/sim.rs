//! Process programs and the single-threaded step simulator.
//!
//! Every process runs `Write, Collect, Write, Collect, ...`, stopping after
//! `workload_len` Writes (and the Collect that follows the last one). The
//! j-th Write of the process at position `i` writes `j * n + i + 1`, so values
//! are strictly increasing per process, distinct across processes, and
//! independent of the ids.
//!
//! [`System`] is the configuration (memory plus all process states) and its
//! transition function; [`Simulator`] wraps it with an event log.

use std::sync::Arc;

use thiserror::Error;

use crate::algo::{collect, AlgoError, Params, Phase, WriterState, WriterStep};
use crate::memory::MemoryState;
use crate::model::{ProcessId, Triple, View};
use crate::scenario::Scenario;
use crate::trace::{scenario_for_file, EventKind, OpKind, Outcome, StepEvent, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("{0} is not enabled")]
    NotEnabled(ProcessId),
    #[error("{0} is poised and cannot collect")]
    PoisedCollect(ProcessId),
    #[error("no process at position {0}")]
    NoSuchPosition(usize),
    #[error(transparent)]
    Algo(#[from] AlgoError),
}

pub fn value_for(n: usize, position: usize, write_index: u64) -> u64 {
    write_index * n as u64 + position as u64 + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Process {
    pub id: ProcessId,
    pub position: usize,
    pub writer: WriterState,
    next_op: OpKind,
    writes_begun: u64,
    collects_done: u64,
    crashed: bool,
}

impl Process {
    fn new(id: ProcessId, position: usize) -> Self {
        Process {
            id,
            position,
            writer: WriterState::new(id),
            next_op: OpKind::Write,
            writes_begun: 0,
            collects_done: 0,
            crashed: false,
        }
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    pub fn collects_done(&self) -> u64 {
        self.collects_done
    }

    /// True once the process has no more operations to run.
    pub fn finished(&self, workload: Option<u64>) -> bool {
        !self.writer.in_progress()
            && self.next_op == OpKind::Write
            && workload.is_some_and(|w| self.writes_begun >= w)
    }

    pub fn poised(&self) -> bool {
        matches!(self.writer.phase(), Phase::NeedUpdate { .. })
    }
}

/// A configuration: shared memory plus every process state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct System {
    params: Params,
    workload: Option<u64>,
    mem: MemoryState,
    procs: Vec<Process>,
}

impl System {
    pub fn new(params: Params, workload: Option<u64>, ids: &[ProcessId]) -> Self {
        System {
            params,
            workload,
            mem: MemoryState::new(params.m),
            procs: ids
                .iter()
                .enumerate()
                .map(|(i, &id)| Process::new(id, i))
                .collect(),
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn workload(&self) -> Option<u64> {
        self.workload
    }

    pub fn mem(&self) -> &MemoryState {
        &self.mem
    }

    pub fn procs(&self) -> &[Process] {
        &self.procs
    }

    pub fn process(&self, pos: usize) -> &Process {
        &self.procs[pos]
    }

    pub fn is_enabled(&self, pos: usize) -> bool {
        let p = &self.procs[pos];
        !p.crashed && !p.finished(self.workload)
    }

    /// Positions of processes that can take a program step.
    pub fn enabled(&self) -> Vec<usize> {
        (0..self.procs.len()).filter(|&i| self.is_enabled(i)).collect()
    }

    /// One shared-memory step of the process's program. Returns the events
    /// it produced, in order.
    pub fn step(&mut self, pos: usize) -> Result<Vec<EventKind>, SimError> {
        let p = self
            .procs
            .get(pos)
            .ok_or(SimError::NoSuchPosition(pos))?;
        if !self.is_enabled(pos) {
            return Err(SimError::NotEnabled(p.id));
        }
        let mut events = Vec::with_capacity(3);
        let proc_ = &mut self.procs[pos];
        if proc_.writer.in_progress() {
            let ws = proc_.writer.step(&self.params, &mut self.mem)?;
            push_writer_events(&mut events, ws, proc_);
        } else if proc_.next_op == OpKind::Collect {
            collect_events(&mut events, proc_.id, &self.mem)?;
            proc_.collects_done += 1;
            proc_.next_op = OpKind::Write;
        } else {
            let value = value_for(self.params.n, proc_.position, proc_.writes_begun);
            let t = proc_.writer.begin_write(&self.params, value)?;
            proc_.writes_begun += 1;
            events.push(EventKind::OpBegin {
                op: OpKind::Write,
                triple: Some(t),
            });
            let ws = proc_.writer.step(&self.params, &mut self.mem)?;
            push_writer_events(&mut events, ws, proc_);
        }
        Ok(events)
    }

    /// A Collect outside the process's program, allowed whenever the process
    /// is alive and not poised (including in the middle of its own Write).
    pub fn side_collect(&mut self, pos: usize) -> Result<Vec<EventKind>, SimError> {
        let p = self
            .procs
            .get(pos)
            .ok_or(SimError::NoSuchPosition(pos))?;
        if p.crashed {
            return Err(SimError::NotEnabled(p.id));
        }
        if p.poised() {
            return Err(SimError::PoisedCollect(p.id));
        }
        let mut events = Vec::with_capacity(3);
        collect_events(&mut events, p.id, &self.mem)?;
        Ok(events)
    }

    pub fn crash(&mut self, pos: usize) -> Result<EventKind, SimError> {
        let p = self
            .procs
            .get_mut(pos)
            .ok_or(SimError::NoSuchPosition(pos))?;
        p.crashed = true;
        p.writer.abandon();
        let discarded = self.mem.discard(p.id).map(|u| u.index);
        Ok(EventKind::Crash { discarded })
    }
}

fn push_writer_events(events: &mut Vec<EventKind>, ws: WriterStep, p: &mut Process) {
    match ws {
        WriterStep::Snapshot {
            registers,
            armed,
            active,
        } => events.push(EventKind::SnapshotTaken {
            registers,
            armed: Some(armed),
            active: Some(active),
        }),
        WriterStep::Update {
            index,
            view,
            active,
            completed,
        } => {
            events.push(EventKind::UpdateApplied {
                index,
                view,
                active,
            });
            if let Some(t) = completed {
                events.push(EventKind::OpEnd {
                    op: OpKind::Write,
                    triple: Some(t),
                    values: None,
                });
                p.next_op = OpKind::Collect;
            }
        }
    }
}

fn collect_events(
    events: &mut Vec<EventKind>,
    id: ProcessId,
    mem: &MemoryState,
) -> Result<(), SimError> {
    let r = collect(id, mem)?;
    events.push(EventKind::OpBegin {
        op: OpKind::Collect,
        triple: None,
    });
    events.push(EventKind::SnapshotTaken {
        registers: r.registers,
        armed: None,
        active: None,
    });
    events.push(EventKind::OpEnd {
        op: OpKind::Collect,
        triple: None,
        values: Some(r.values.into_values().collect()),
    });
    Ok(())
}

/// A [`System`] plus the event log of everything it did.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    ids: Vec<ProcessId>,
    system: System,
    events: Vec<StepEvent>,
    digest: u64,
    steps: u64,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Self {
        let ids = scenario.process_ids();
        let system = System::new(scenario.params(), scenario.workload_len, &ids);
        let digest = system.mem().digest();
        let mut sim = Simulator {
            scenario: scenario.clone(),
            ids: ids.clone(),
            system,
            events: Vec::new(),
            digest,
            steps: 0,
        };
        sim.record(
            None,
            EventKind::Start {
                scenario: scenario_for_file(scenario),
                ids,
            },
        );
        sim
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn ids(&self) -> &[ProcessId] {
        &self.ids
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Scheduled shared-memory steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn position_of(&self, p: ProcessId) -> Option<usize> {
        self.ids.iter().position(|&q| q == p)
    }

    fn record(&mut self, actor: Option<ProcessId>, kind: EventKind) {
        if matches!(kind, EventKind::UpdateApplied { .. }) {
            self.digest = self.system.mem().digest();
        }
        self.events.push(StepEvent {
            seq: self.events.len() as u64,
            actor,
            kind,
            mem_digest: self.digest,
        });
    }

    fn record_all(&mut self, pos: usize, kinds: Vec<EventKind>) -> usize {
        let actor = self.ids[pos];
        let first = self.events.len();
        for k in kinds {
            self.record(Some(actor), k);
        }
        first
    }

    /// One program step. Returns the seq of its first event.
    pub fn step(&mut self, pos: usize) -> Result<usize, SimError> {
        let kinds = self.system.step(pos)?;
        self.steps += 1;
        Ok(self.record_all(pos, kinds))
    }

    pub fn side_collect(&mut self, pos: usize) -> Result<usize, SimError> {
        let kinds = self.system.side_collect(pos)?;
        self.steps += 1;
        Ok(self.record_all(pos, kinds))
    }

    pub fn crash(&mut self, pos: usize) -> Result<(), SimError> {
        if self.system.process(pos).crashed() {
            return Ok(());
        }
        let k = self.system.crash(pos)?;
        self.record(Some(self.ids[pos]), k);
        Ok(())
    }

    /// The last Write triple completed by the process at `pos`, if any.
    pub fn last_completed(&self, pos: usize) -> Option<Triple> {
        let actor = self.ids[pos];
        self.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::OpEnd {
                op: OpKind::Write,
                triple,
                ..
            } if e.actor == Some(actor) => *triple,
            _ => None,
        })
    }

    pub fn registers(&self) -> &[Arc<View>] {
        self.system.mem().registers()
    }

    pub fn finish(mut self, outcome: Outcome) -> Trace {
        let steps = self.steps;
        self.record(None, EventKind::End { outcome, steps });
        Trace::from_events(self.events).expect("simulator traces are well formed")
    }
}
