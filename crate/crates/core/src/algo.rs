//! Step machines for the SWMR Write and Collect operations.
//!
//! A Write loops over `snapshot → merge → update`, cycling its write
//! position over the first `write_pos_max` registers, and returns once one
//! of its own snapshots showed its triple in at least `threshold` registers.
//! `write_pos_max` starts at `n` and grows by one for every other process
//! observed making progress during the Write, up to `n + k - 1`.
//!
//! Each call to [`WriterState::step`] is one shared-memory step. The snapshot
//! step also arms the following update, so between its snapshot and its
//! update a writer is poised on (covers) the target register.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{occurrences_in, MemoryError, MemoryState};
use crate::model::{latest_of_views, ModelError, ProcessId, Triple, View};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgoError {
    #[error("{0} cannot begin a Write while another Write is in progress")]
    WriteInProgress(ProcessId),
    #[error("{0} has no Write in progress")]
    NoWriteInProgress(ProcessId),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// System-wide parameters shared by every process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Params {
    pub n: usize,
    pub k: usize,
    /// Number of registers actually present.
    pub m: usize,
    /// Registers that must hold the triple in one snapshot before a Write returns.
    pub threshold: usize,
}

impl Params {
    /// The honest configuration: `n + k - 1` registers, threshold `n`.
    pub fn honest(n: usize, k: usize) -> Self {
        Params {
            n,
            k,
            m: n + k - 1,
            threshold: n,
        }
    }

    fn bound(&self, active: usize) -> usize {
        write_pos_max(self.n, self.k, active).min(self.m)
    }
}

/// `min(n + active - 1, n + k - 1)`.
pub fn write_pos_max(n: usize, k: usize, active_count: usize) -> usize {
    debug_assert!(active_count >= 1);
    (n + active_count - 1).min(n + k - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    NeedSnapshot,
    /// Snapshot taken and update armed; `seen_in` is how many registers of
    /// that snapshot held the current triple.
    NeedUpdate {
        seen_in: usize,
    },
    Done,
}

/// What one writer step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriterStep {
    Snapshot {
        registers: Vec<Arc<View>>,
        armed: usize,
        active: usize,
    },
    Update {
        index: usize,
        view: Arc<View>,
        active: usize,
        /// Set when this update ended the Write.
        completed: Option<Triple>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WriterState {
    owner: ProcessId,
    view: View,
    op_counter: u64,
    active_procs: BTreeSet<ProcessId>,
    write_pos: usize,
    write_pos_max: usize,
    phase: Phase,
    current: Option<Triple>,
    merged: MergeCache,
}

/// The register contents last merged into the view, by index. A register
/// still holding the same allocation needs no merge: views only grow.
/// Ignored by equality and hashing.
#[derive(Debug, Clone, Default)]
struct MergeCache(Vec<Option<Arc<View>>>);

impl PartialEq for MergeCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for MergeCache {}

impl std::hash::Hash for MergeCache {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

impl WriterState {
    pub fn new(owner: ProcessId) -> Self {
        WriterState {
            owner,
            view: View::new(),
            op_counter: 0,
            active_procs: BTreeSet::new(),
            write_pos: 0,
            write_pos_max: 0,
            phase: Phase::Idle,
            current: None,
            merged: MergeCache::default(),
        }
    }

    pub fn owner(&self) -> ProcessId {
        self.owner
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    /// Number of completed Writes.
    pub fn op_counter(&self) -> u64 {
        self.op_counter
    }

    pub fn active_procs(&self) -> &BTreeSet<ProcessId> {
        &self.active_procs
    }

    pub fn write_pos(&self) -> usize {
        self.write_pos
    }

    pub fn write_pos_max(&self) -> usize {
        self.write_pos_max
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn current(&self) -> Option<Triple> {
        self.current
    }

    pub fn in_progress(&self) -> bool {
        matches!(self.phase, Phase::NeedSnapshot | Phase::NeedUpdate { .. })
    }

    pub fn begin_write(&mut self, params: &Params, value: u64) -> Result<Triple, AlgoError> {
        if self.in_progress() {
            return Err(AlgoError::WriteInProgress(self.owner));
        }
        let t = Triple::new(value, self.owner, self.op_counter);
        self.active_procs.clear();
        self.active_procs.insert(self.owner);
        self.view.insert(t);
        self.write_pos = 0;
        self.write_pos_max = params.bound(1);
        self.phase = Phase::NeedSnapshot;
        self.current = Some(t);
        Ok(t)
    }

    /// Performs the next shared-memory step of the current Write.
    pub fn step(
        &mut self,
        params: &Params,
        mem: &mut MemoryState,
    ) -> Result<WriterStep, AlgoError> {
        match self.phase {
            Phase::NeedSnapshot => self.snapshot_step(mem),
            Phase::NeedUpdate { seen_in } => self.update_step(params, mem, seen_in),
            Phase::Idle | Phase::Done => Err(AlgoError::NoWriteInProgress(self.owner)),
        }
    }

    fn snapshot_step(&mut self, mem: &mut MemoryState) -> Result<WriterStep, AlgoError> {
        let snap = mem.snapshot(self.owner)?;
        let current = self.current.expect("write in progress has a triple");

        // Activity is judged against the view as it was before merging.
        let known: Vec<Triple> = self.view.latest().collect();
        for t in snap.iter().flat_map(|r| r.latest()) {
            let newer = known
                .iter()
                .find(|k| k.writer == t.writer)
                .is_none_or(|k| t.counter > k.counter);
            if newer {
                self.active_procs.insert(t.writer);
            }
        }
        self.merged.0.resize(snap.len(), None);
        for (r, last) in snap.iter().zip(self.merged.0.iter_mut()) {
            if last.as_ref().is_none_or(|l| !Arc::ptr_eq(l, r)) {
                self.view.merge_in(r);
                *last = Some(r.clone());
            }
        }

        let seen_in = occurrences_in(&snap, &current);
        let armed = self.write_pos;
        mem.arm_update(self.owner, armed, Arc::new(self.view.clone()))?;
        self.phase = Phase::NeedUpdate { seen_in };
        Ok(WriterStep::Snapshot {
            registers: snap,
            armed,
            active: self.active_procs.len(),
        })
    }

    fn update_step(
        &mut self,
        params: &Params,
        mem: &mut MemoryState,
        seen_in: usize,
    ) -> Result<WriterStep, AlgoError> {
        let view = mem
            .pending()
            .get(&self.owner)
            .map(|u| u.view.clone())
            .ok_or(MemoryError::NothingArmed(self.owner))?;
        let index = mem.fire_update(self.owner)?;
        let active = self.active_procs.len();
        self.write_pos = (self.write_pos + 1) % self.write_pos_max;
        self.write_pos_max = params.bound(active);

        let completed = if seen_in >= params.threshold {
            self.phase = Phase::Done;
            self.op_counter += 1;
            self.current
        } else {
            self.phase = Phase::NeedSnapshot;
            None
        };
        Ok(WriterStep::Update {
            index,
            view,
            active,
            completed,
        })
    }

    /// Drops any in-progress Write (crash).
    pub fn abandon(&mut self) {
        if self.in_progress() {
            self.phase = Phase::Idle;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectResult {
    pub reader: ProcessId,
    pub values: BTreeMap<ProcessId, Triple>,
    pub registers: Vec<Arc<View>>,
}

/// One atomic snapshot, then the latest triple per writer.
pub fn collect(p: ProcessId, mem: &MemoryState) -> Result<CollectResult, AlgoError> {
    let registers = mem.snapshot(p)?;
    let values = latest_of_views(registers.iter().map(|r| r.as_ref()))?;
    Ok(CollectResult {
        reader: p,
        values,
        registers,
    })
}
