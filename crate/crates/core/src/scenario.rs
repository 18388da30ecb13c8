//! Scenario files: everything needed to reproduce a run.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::Params;
use crate::model::ProcessId;

/// Default fairness parameter W: each live process steps at least once in
/// every `n * W` consecutive steps.
pub const DEFAULT_FAIRNESS_WINDOW: u64 = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerSpec {
    RoundRobin {},
    /// Uniform random choice among live processes, forced to the
    /// longest-waiting process when its wait approaches `n * window`.
    Random {
        #[serde(default = "default_window")]
        window: u64,
    },
    Solo {
        process: ProcessId,
    },
    /// Replays a fixed choice sequence.
    Script {
        actors: Vec<ProcessId>,
    },
    /// The covering / block-write adversary against `victim`.
    Covering {
        victim: ProcessId,
    },
}

fn default_window() -> u64 {
    DEFAULT_FAIRNESS_WINDOW
}

impl SchedulerSpec {
    /// Fairness window if this scheduler is fair over its eligible set.
    pub fn fairness_window(&self) -> Option<u64> {
        match self {
            SchedulerSpec::RoundRobin {} => Some(1),
            SchedulerSpec::Random { window } => Some(*window),
            SchedulerSpec::Solo { .. } => Some(1),
            SchedulerSpec::Script { .. } | SchedulerSpec::Covering { .. } => None,
        }
    }

    /// Processes this scheduler may ever pick, or `None` for all of them.
    pub fn eligible(&self) -> Option<Vec<ProcessId>> {
        match self {
            SchedulerSpec::Solo { process } => Some(vec![*process]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub k: usize,
    /// Register count; `n + k - 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Completion threshold; `n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    pub scheduler: SchedulerSpec,
    /// Global step index at which each listed process crashes.
    #[serde(default)]
    pub crashes: BTreeMap<ProcessId, u64>,
    /// Writes per process; `null` means unbounded.
    #[serde(default)]
    pub workload_len: Option<u64>,
    pub seed: u64,
    pub budget: u64,
    /// Participating ids, ascending. Not part of the file format: files
    /// always use `1..=n`; renaming experiments set this directly.
    #[serde(skip)]
    pub ids: Option<Vec<ProcessId>>,
}

impl Scenario {
    pub fn new(n: usize, k: usize, scheduler: SchedulerSpec, seed: u64, budget: u64) -> Self {
        Scenario {
            n,
            k,
            m: None,
            threshold: None,
            scheduler,
            crashes: BTreeMap::new(),
            workload_len: None,
            seed,
            budget,
            ids: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn registers(&self) -> usize {
        self.m.unwrap_or(self.n + self.k - 1)
    }

    pub fn completion_threshold(&self) -> usize {
        self.threshold.unwrap_or(self.n)
    }

    pub fn params(&self) -> Params {
        Params {
            n: self.n,
            k: self.k,
            m: self.registers(),
            threshold: self.completion_threshold(),
        }
    }

    pub fn process_ids(&self) -> Vec<ProcessId> {
        self.ids
            .clone()
            .unwrap_or_else(|| (1..=self.n as u64).map(ProcessId).collect())
    }

    pub fn position_of(&self, p: ProcessId) -> Option<usize> {
        self.process_ids().iter().position(|&q| q == p)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.k == 0 || self.k > self.n {
            return bad(format!("k must satisfy 1 <= k <= n (k = {}, n = {})", self.k, self.n));
        }
        let m = self.registers();
        if m == 0 {
            return bad("m must be at least 1".into());
        }
        let th = self.completion_threshold();
        if th == 0 || th > m {
            return bad(format!("threshold must satisfy 1 <= threshold <= m (threshold = {th}, m = {m})"));
        }
        let ids = self.process_ids();
        if ids.len() != self.n {
            return bad(format!("{} ids given for n = {}", ids.len(), self.n));
        }
        if ids.iter().any(|p| p.0 == 0) || ids.windows(2).any(|w| w[0] >= w[1]) {
            return bad("process ids must be positive and strictly increasing".into());
        }
        let known = |p: &ProcessId| ids.contains(p);
        if let Some(p) = self.crashes.keys().find(|p| !known(p)) {
            return bad(format!("crash entry for unknown process {p}"));
        }
        match &self.scheduler {
            SchedulerSpec::Random { window } if *window == 0 => {
                return bad("fairness window must be at least 1".into())
            }
            SchedulerSpec::Solo { process } if !known(process) => {
                return bad(format!("solo process {process} is not a participant"))
            }
            SchedulerSpec::Script { actors } => {
                if let Some(p) = actors.iter().find(|p| !known(p)) {
                    return bad(format!("script names unknown process {p}"));
                }
            }
            SchedulerSpec::Covering { victim } => {
                if !known(victim) {
                    return bad(format!("victim {victim} is not a participant"));
                }
                if self.n < 2 {
                    return bad("the covering plan needs n >= 2".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// An honestly provisioned scenario under the fair random scheduler with a
/// seeded crash pattern: between 0 and `n - 1` processes crash, each at a
/// uniformly chosen step below `budget`. At least one process survives.
pub fn fair_random_scenario(n: usize, k: usize, seed: u64, budget: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a5);
    let crashing = rng.gen_range(0..n);
    let mut s = Scenario::new(
        n,
        k,
        SchedulerSpec::Random {
            window: DEFAULT_FAIRNESS_WINDOW,
        },
        seed,
        budget,
    );
    for pos in sample(&mut rng, n, crashing).into_vec() {
        let at = rng.gen_range(0..budget.max(1));
        s.crashes.insert(ProcessId(pos as u64 + 1), at);
    }
    s
}
