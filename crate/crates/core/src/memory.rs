//! Simulated shared memory: `m` MWMR registers with atomic snapshot and a
//! two-phase (arm, then fire) single-register update.
//!
//! Arming records that a process is poised to write a fixed view to a fixed
//! register. The register is unchanged until the process fires. Covering
//! adversaries and the persistence checkers inspect this state through
//! [`MemoryState::poised_target`].

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use thiserror::Error;

use crate::model::{ProcessId, Triple, View};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("{0} is poised to update register {1} and cannot take a snapshot")]
    PoisedSnapshot(ProcessId, usize),
    #[error("{0} already has a pending update to register {1}")]
    AlreadyArmed(ProcessId, usize),
    #[error("register index {index} out of range (m = {m})")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("{0} has no pending update")]
    NothingArmed(ProcessId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PendingUpdate {
    pub index: usize,
    pub view: Arc<View>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemoryState {
    registers: Vec<Arc<View>>,
    // Per-register view digests, kept in step with `registers`.
    digests: Vec<u64>,
    pending: BTreeMap<ProcessId, PendingUpdate>,
}

impl MemoryState {
    /// Initial configuration: `m` empty registers, nobody poised.
    pub fn new(m: usize) -> Self {
        let empty = Arc::new(View::new());
        let d = view_digest(&empty);
        MemoryState {
            registers: vec![empty; m],
            digests: vec![d; m],
            pending: BTreeMap::new(),
        }
    }

    pub fn from_registers(registers: Vec<View>) -> Self {
        let registers: Vec<Arc<View>> = registers.into_iter().map(Arc::new).collect();
        let digests = registers.iter().map(|r| view_digest(r)).collect();
        MemoryState {
            registers,
            digests,
            pending: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn registers(&self) -> &[Arc<View>] {
        &self.registers
    }

    pub fn register(&self, index: usize) -> &View {
        &self.registers[index]
    }

    pub fn pending(&self) -> &BTreeMap<ProcessId, PendingUpdate> {
        &self.pending
    }

    /// Atomically copies every register.
    pub fn snapshot(&self, p: ProcessId) -> Result<Vec<Arc<View>>, MemoryError> {
        if let Some(u) = self.pending.get(&p) {
            return Err(MemoryError::PoisedSnapshot(p, u.index));
        }
        Ok(self.registers.clone())
    }

    pub fn arm_update(
        &mut self,
        p: ProcessId,
        index: usize,
        view: Arc<View>,
    ) -> Result<(), MemoryError> {
        if index >= self.registers.len() {
            return Err(MemoryError::IndexOutOfRange {
                index,
                m: self.registers.len(),
            });
        }
        if let Some(u) = self.pending.get(&p) {
            return Err(MemoryError::AlreadyArmed(p, u.index));
        }
        self.pending.insert(p, PendingUpdate { index, view });
        Ok(())
    }

    /// Replaces the armed register with the armed view verbatim and returns
    /// the register index.
    pub fn fire_update(&mut self, p: ProcessId) -> Result<usize, MemoryError> {
        let u = self
            .pending
            .remove(&p)
            .ok_or(MemoryError::NothingArmed(p))?;
        self.digests[u.index] = view_digest(&u.view);
        self.registers[u.index] = u.view;
        Ok(u.index)
    }

    /// Drops `p`'s pending step, if any (crash).
    pub fn discard(&mut self, p: ProcessId) -> Option<PendingUpdate> {
        self.pending.remove(&p)
    }

    pub fn poised_target(&self, p: ProcessId) -> Option<usize> {
        self.pending.get(&p).map(|u| u.index)
    }

    pub fn is_covered(&self, index: usize) -> bool {
        self.pending.values().any(|u| u.index == index)
    }

    /// Overwrites a register directly, outside any process step. Test and
    /// fault-injection helper.
    pub fn set_register(&mut self, index: usize, view: View) {
        self.digests[index] = view_digest(&view);
        self.registers[index] = Arc::new(view);
    }

    /// FNV-1a digest of the register array.
    pub fn digest(&self) -> u64 {
        digest_of_register_digests(&self.digests)
    }
}

/// Number of registers whose content contains `t`.
pub fn occurrence_count(mem: &MemoryState, t: &Triple) -> usize {
    occurrences_in(mem.registers(), t)
}

pub fn occurrences_in(registers: &[Arc<View>], t: &Triple) -> usize {
    registers.iter().filter(|r| r.contains(t)).count()
}

/// FNV-1a over the canonical byte encoding of a view: the triple count,
/// then `(writer, counter, value)` of each triple, all as unsigned LEB128.
pub fn view_digest(v: &View) -> u64 {
    let mut buf = Vec::with_capacity(10 + 4 * v.len());
    leb128(&mut buf, v.len() as u64);
    for t in v {
        leb128(&mut buf, t.writer.0);
        leb128(&mut buf, t.counter);
        leb128(&mut buf, t.value);
    }
    let mut h = FnvHasher::default();
    h.write(&buf);
    h.finish()
}

fn leb128(buf: &mut Vec<u8>, mut x: u64) {
    while x >= 0x80 {
        buf.push((x as u8) | 0x80);
        x >>= 7;
    }
    buf.push(x as u8);
}

/// FNV-1a over `(index, view digest)` pairs of all registers, in index order.
pub fn digest_of_register_digests(digests: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    for (i, d) in digests.iter().enumerate() {
        h.write(&(i as u64).to_le_bytes());
        h.write(&d.to_le_bytes());
    }
    h.finish()
}

pub fn registers_digest(registers: &[Arc<View>]) -> u64 {
    let ds: Vec<u64> = registers.iter().map(|r| view_digest(r)).collect();
    digest_of_register_digests(&ds)
}
