//! Schedulers and the run driver.
//!
//! Schedulers pick process *positions* (index in the ascending id list),
//! never ids, so a run depends on ids only through their order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ProcessId, Triple};
use crate::scenario::{Scenario, ScenarioError, SchedulerSpec};
use crate::sim::{SimError, Simulator};
use crate::trace::{EventKind, OpKind, Outcome, Trace};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("script step {index}: {actor} cannot step")]
    ScriptNotApplicable { index: usize, actor: ProcessId },
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
}

/// Live scheduler state. A deterministic function of the scenario seed and
/// the choices made so far.
#[derive(Debug, Clone)]
pub enum SchedulerState {
    RoundRobin {
        last: Option<usize>,
    },
    Random {
        rng: ChaCha8Rng,
        ages: Vec<u64>,
        /// Once the oldest live process has waited this long it is forced.
        force_at: u64,
    },
    Solo {
        position: usize,
    },
    Script {
        positions: Vec<usize>,
        next: usize,
    },
}

impl SchedulerState {
    /// Builds the state for a non-covering scheduler spec.
    pub fn new(scenario: &Scenario) -> Self {
        let n = scenario.n;
        match &scenario.scheduler {
            SchedulerSpec::RoundRobin {} => SchedulerState::RoundRobin { last: None },
            SchedulerSpec::Random { window } => SchedulerState::Random {
                rng: ChaCha8Rng::seed_from_u64(scenario.seed),
                ages: vec![0; n],
                force_at: (n as u64 * window).saturating_sub(n as u64),
            },
            SchedulerSpec::Solo { process } => SchedulerState::Solo {
                position: scenario.position_of(*process).expect("validated"),
            },
            SchedulerSpec::Script { actors } => SchedulerState::Script {
                positions: actors
                    .iter()
                    .map(|a| scenario.position_of(*a).expect("validated"))
                    .collect(),
                next: 0,
            },
            SchedulerSpec::Covering { .. } => {
                panic!("the covering adversary is scripted, see covering_block_write_plan")
            }
        }
    }

    /// Picks the next position among `enabled` (ascending). `Ok(None)` means
    /// this scheduler has nothing left to run.
    pub fn next(&mut self, enabled: &[usize]) -> Result<Option<usize>, usize> {
        if enabled.is_empty() {
            return Ok(None);
        }
        match self {
            SchedulerState::RoundRobin { last } => {
                let pick = match *last {
                    None => enabled[0],
                    Some(l) => *enabled.iter().find(|&&p| p > l).unwrap_or(&enabled[0]),
                };
                *last = Some(pick);
                Ok(Some(pick))
            }
            SchedulerState::Random {
                rng,
                ages,
                force_at,
            } => {
                let oldest = enabled
                    .iter()
                    .copied()
                    .max_by_key(|&p| (ages[p], std::cmp::Reverse(p)))
                    .expect("non-empty");
                let pick = if ages[oldest] >= *force_at {
                    oldest
                } else {
                    enabled[rng.gen_range(0..enabled.len())]
                };
                for &p in enabled {
                    ages[p] += 1;
                }
                ages[pick] = 0;
                Ok(Some(pick))
            }
            SchedulerState::Solo { position } => {
                Ok(enabled.contains(position).then_some(*position))
            }
            SchedulerState::Script { positions, next } => {
                let Some(&p) = positions.get(*next) else {
                    return Ok(None);
                };
                if !enabled.contains(&p) {
                    return Err(*next);
                }
                *next += 1;
                Ok(Some(p))
            }
        }
    }
}

/// Runs a scenario to its budget (or until nothing can step) and returns
/// the full trace. Pure function of the scenario.
pub fn run(scenario: &Scenario) -> Result<Trace, RunError> {
    scenario.validate()?;
    if let SchedulerSpec::Covering { victim } = scenario.scheduler {
        return Ok(covering_block_write_plan(scenario, victim)?.trace);
    }
    let mut sim = Simulator::new(scenario);
    let mut sched = SchedulerState::new(scenario);
    let crashes: Vec<(usize, u64)> = scenario
        .crashes
        .iter()
        .map(|(p, s)| (scenario.position_of(*p).expect("validated"), *s))
        .collect();
    let scripted = matches!(scenario.scheduler, SchedulerSpec::Script { .. });

    let outcome = loop {
        let step = sim.steps();
        for &(pos, at) in &crashes {
            if at <= step {
                sim.crash(pos)?;
            }
        }
        if step >= scenario.budget {
            break Outcome::BudgetExhausted;
        }
        let enabled = sim.system().enabled();
        match sched.next(&enabled) {
            Ok(Some(pos)) => {
                sim.step(pos)?;
            }
            Ok(None) if scripted => break Outcome::Scripted,
            Ok(None) => {
                let all_crashed = sim.system().procs().iter().all(|p| p.crashed());
                break if all_crashed {
                    Outcome::AllCrashed
                } else {
                    Outcome::AllDone
                };
            }
            Err(index) => {
                let SchedulerSpec::Script { actors } = &scenario.scheduler else {
                    unreachable!()
                };
                return Err(RunError::ScriptNotApplicable {
                    index,
                    actor: actors[index],
                });
            }
        }
    };
    Ok(sim.finish(outcome))
}

/// What the covering adversary achieved.
#[derive(Debug, Clone)]
pub struct CoveringReport {
    pub trace: Trace,
    /// Each coverer and the register it was paused on, in phase-1 order.
    pub covered: Vec<(ProcessId, usize)>,
    /// Whether every register was covered before the victim ran.
    pub all_covered: bool,
    pub victim: ProcessId,
    /// The victim's completed triple, if phase 2 finished.
    pub victim_triple: Option<Triple>,
    pub reader: Option<ProcessId>,
    /// The reader's Collect result.
    pub collected: Option<Vec<Triple>>,
    pub narrative: Vec<String>,
}

impl CoveringReport {
    /// The victim's completed Write is missing from the final Collect.
    pub fn lost_write(&self) -> bool {
        match (&self.victim_triple, &self.collected) {
            (Some(t), Some(vals)) => !vals.iter().any(|v| v.writer == t.writer),
            _ => false,
        }
    }
}

/// The block-write adversary.
///
/// 1. Each non-victim, in position order, is stepped until it is poised on a
///    register no earlier coverer holds, then paused.
/// 2. The victim runs solo until its first Write completes.
/// 3. All paused coverers fire (block write).
/// 4. The first coverer (or the victim, if there is none) runs a Collect.
///
/// The victim takes no step in phases 1 and 3.
pub fn covering_block_write_plan(
    scenario: &Scenario,
    victim: ProcessId,
) -> Result<CoveringReport, RunError> {
    scenario.validate()?;
    let mut sim = Simulator::new(scenario);
    let m = scenario.registers();
    let victim_pos = sim
        .position_of(victim)
        .ok_or_else(|| ScenarioError::Invalid(format!("unknown victim {victim}")))?;
    let budget = scenario.budget;
    let mut narrative = Vec::new();

    // Phase 1: cover.
    let mut covered: Vec<(ProcessId, usize)> = Vec::new();
    for pos in 0..sim.ids().len() {
        if pos == victim_pos || covered.len() == m {
            continue;
        }
        let id = sim.ids()[pos];
        loop {
            let target = sim.system().mem().poised_target(id);
            if let Some(r) = target {
                if covered.iter().all(|&(_, c)| c != r) {
                    covered.push((id, r));
                    narrative.push(format!("phase 1: {id} is poised on register {r}"));
                    break;
                }
            }
            if sim.steps() >= budget || !sim.system().is_enabled(pos) {
                narrative.push(format!(
                    "phase 1: {id} could not reach an uncovered register within the budget"
                ));
                break;
            }
            sim.step(pos)?;
        }
    }
    let all_covered = covered.len() == m;
    narrative.push(format!(
        "phase 1: {} of {} registers covered",
        covered.len(),
        m
    ));

    // Phase 2: victim runs solo until its first Write returns.
    let mut victim_triple = None;
    while sim.steps() < budget && sim.system().is_enabled(victim_pos) {
        let first = sim.step(victim_pos)?;
        let done = sim.events()[first..].iter().find_map(|e| match &e.kind {
            EventKind::OpEnd {
                op: OpKind::Write,
                triple,
                ..
            } => *triple,
            _ => None,
        });
        if done.is_some() {
            victim_triple = done;
            break;
        }
    }
    match victim_triple {
        Some(t) => {
            let held: Vec<usize> = (0..m)
                .filter(|&r| sim.registers()[r].contains(&t))
                .collect();
            narrative.push(format!(
                "phase 2: victim {victim} completed Write {t}; registers holding it: {held:?}"
            ));
        }
        None => narrative.push(format!(
            "phase 2: victim {victim} did not complete a Write within the budget"
        )),
    }

    // Phase 3: block write.
    for &(id, r) in &covered {
        let pos = sim.position_of(id).expect("participant");
        sim.step(pos)?;
        narrative.push(format!("phase 3: {id} fires its pending update to register {r}"));
    }
    if let Some(t) = victim_triple {
        let held: Vec<usize> = (0..m)
            .filter(|&r| sim.registers()[r].contains(&t))
            .collect();
        narrative.push(format!(
            "phase 3: after the block write, registers holding {t}: {held:?}"
        ));
    }

    // Phase 4: a Collect by a designated reader.
    let reader = covered.first().map(|&(id, _)| id).unwrap_or(victim);
    let reader_pos = sim.position_of(reader).expect("participant");
    let first = sim.side_collect(reader_pos)?;
    let collected = sim.events()[first..].iter().find_map(|e| match &e.kind {
        EventKind::OpEnd {
            op: OpKind::Collect,
            values,
            ..
        } => values.clone(),
        _ => None,
    });
    if let Some(vals) = &collected {
        let shown: Vec<String> = vals.iter().map(|t| t.to_string()).collect();
        narrative.push(format!(
            "phase 4: Collect by {reader} returns {{{}}}",
            shown.join(", ")
        ));
    }

    let mut report = CoveringReport {
        trace: sim.finish(Outcome::Scripted),
        covered,
        all_covered,
        victim,
        victim_triple,
        reader: Some(reader),
        collected,
        narrative,
    };
    let verdict = if report.lost_write() {
        format!("lost write: {victim}'s completed Write is missing from the Collect")
    } else {
        "no violation (honest configuration)".to_string()
    };
    report.narrative.push(verdict);
    Ok(report)
}
