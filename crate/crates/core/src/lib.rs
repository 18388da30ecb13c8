//! Deterministic step-level simulator and trace checkers for a k-lock-free
//! single-writer multi-reader memory emulated over `n + k - 1` multi-writer
//! registers.
//!
//! - [`model`]: triples and views.
//! - [`memory`]: the shared registers with atomic snapshot and two-phase
//!   update.
//! - [`algo`]: the per-process Write state machine and Collect.
//! - [`sim`], [`schedule`]: the simulator and its schedulers, including the
//!   block-write adversary.
//! - [`trace`]: JSON Lines traces.
//! - [`check`]: offline checkers over traces.
//! - [`explore`]: bounded exhaustive exploration.
//! - [`cli`]: the `swmr-forge` command line.

pub mod algo;
pub mod check;
pub mod cli;
pub mod explore;
pub mod memory;
pub mod model;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod trace;

pub use algo::{collect, write_pos_max, Params, WriterState};
pub use check::{check_safety_suite, Verdict, Violation};
pub use explore::{explore, replay, ConfigKey, ExploreParams, Report};
pub use memory::MemoryState;
pub use model::{ProcessId, Triple, View};
pub use scenario::{fair_random_scenario, Scenario, SchedulerSpec};
pub use schedule::{covering_block_write_plan, run, CoveringReport};
pub use sim::{Simulator, System};
pub use trace::{StepEvent, Trace};
