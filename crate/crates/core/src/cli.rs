//! The `swmr-forge` command line.
//!
//! Exit codes: 0 on pass, 1 on a violation (or a demo that failed to
//! demonstrate), 2 on malformed input or harness misuse.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::check::{
    check_persistence, check_progress, check_reading_map, check_register_budget,
    check_structure, rules, CheckError, Verdict,
};
use crate::explore::{explore, ExploreError, ExploreParams};
use crate::model::ProcessId;
use crate::scenario::{fair_random_scenario, Scenario, ScenarioError, SchedulerSpec};
use crate::schedule::{covering_block_write_plan, run, RunError};
use crate::trace::{EventKind, OpKind, Trace, TraceError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub const SEED_ENV: &str = "SWMR_FORGE_SEED";
pub const DEFAULT_PER_OP_BUDGET: u64 = 100;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "swmr-forge", version, about = "Simulate and check a k-lock-free SWMR memory over MWMR registers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario, write its trace, and check it.
    Run(RunArgs),
    /// Check an existing trace file.
    Check(CheckArgs),
    /// Exhaustively explore all schedules of a tiny instance.
    Explore(ExploreArgs),
    /// Demonstrate the lost write of an under-provisioned memory.
    DemoLostWrite(DemoArgs),
    /// Run a seeded campaign of fair random scenarios through the safety checkers.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct CheckFlags {
    /// Comma-separated checkers: safety, persistence, budget, progress, all.
    #[arg(long, value_delimiter = ',', default_value = "safety,persistence,budget")]
    pub check: Vec<String>,
    /// Own-step budget per Write for the progress checker.
    #[arg(long, default_value_t = DEFAULT_PER_OP_BUDGET)]
    pub per_op_budget: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Overrides the scenario step budget.
    #[arg(long)]
    pub budget: Option<u64>,
    #[command(flatten)]
    pub checks: CheckFlags,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub checks: CheckFlags,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// Register count; `n + k - 1` when absent.
    #[arg(long)]
    pub m: Option<usize>,
    /// Completion threshold; `min(n, m)` when absent.
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long, default_value_t = 14)]
    pub depth: usize,
    /// Writes per process.
    #[arg(long, default_value_t = 1)]
    pub workload_len: u64,
    /// Succeed iff a violation is found.
    #[arg(long)]
    pub expect_violation: bool,
    #[arg(long)]
    pub override_guards: bool,
    /// Also write the report here.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub n: usize,
    /// Register count; `n - 1` when absent.
    #[arg(long)]
    pub m: Option<usize>,
    /// Completion threshold; `n - 1` when absent.
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    #[arg(long, default_value = "lost-write-demo")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// Number of seeds.
    #[arg(long, default_value_t = 200)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Steps per run.
    #[arg(long, default_value_t = 5000)]
    pub budget: u64,
}

/// Parses the process arguments and runs the command, returning the exit
/// code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Explore(a) => cmd_explore(&a),
        Command::DemoLostWrite(a) => cmd_demo_lost_write(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Safety,
    Persistence,
    Budget,
    Progress,
}

pub fn parse_checks(names: &[String]) -> Result<Vec<CheckKind>, CliError> {
    let mut out = Vec::new();
    for name in names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let kinds: &[CheckKind] = match name {
            "safety" => &[CheckKind::Safety],
            "persistence" => &[CheckKind::Persistence],
            "budget" => &[CheckKind::Budget],
            "progress" => &[CheckKind::Progress],
            "all" => &[
                CheckKind::Safety,
                CheckKind::Persistence,
                CheckKind::Budget,
                CheckKind::Progress,
            ],
            other => return Err(CliError::Usage(format!("unknown check {other:?}"))),
        };
        for k in kinds {
            if !out.contains(k) {
                out.push(*k);
            }
        }
    }
    Ok(out)
}

/// Runs the selected checkers. `safety` covers trace structure and the
/// reading map.
pub fn run_checks(trace: &Trace, checks: &[CheckKind], per_op_budget: u64) -> Result<Verdict, CliError> {
    let mut v = Verdict::new();
    for c in checks {
        match c {
            CheckKind::Safety => {
                v.merge(check_structure(trace)?);
                v.merge(check_reading_map(trace)?);
            }
            CheckKind::Persistence => v.merge(check_persistence(trace)?),
            CheckKind::Budget => {
                v.merge(check_register_budget(trace, trace.scenario.n, trace.scenario.k)?)
            }
            CheckKind::Progress => v.merge(check_progress(trace, trace.scenario.k, per_op_budget)?),
        }
    }
    Ok(v)
}

/// Per-process completed operations and per-register update counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub steps: u64,
    pub writes: BTreeMap<ProcessId, u64>,
    pub collects: BTreeMap<ProcessId, u64>,
    pub register_updates: Vec<u64>,
}

pub fn stats(trace: &Trace) -> Stats {
    let mut s = Stats {
        steps: trace.shared_steps(),
        writes: trace.ids.iter().map(|&p| (p, 0)).collect(),
        collects: trace.ids.iter().map(|&p| (p, 0)).collect(),
        register_updates: vec![0; trace.scenario.registers()],
    };
    for e in &trace.events {
        match (&e.kind, e.actor) {
            (EventKind::OpEnd { op: OpKind::Write, .. }, Some(p)) => {
                *s.writes.entry(p).or_default() += 1
            }
            (EventKind::OpEnd { op: OpKind::Collect, .. }, Some(p)) => {
                *s.collects.entry(p).or_default() += 1
            }
            (EventKind::UpdateApplied { index, .. }, _) => {
                if let Some(c) = s.register_updates.get_mut(*index) {
                    *c += 1;
                }
            }
            _ => {}
        }
    }
    s
}

fn print_stats(trace: &Trace) {
    let s = stats(trace);
    eprintln!("steps: {}", s.steps);
    for p in &trace.ids {
        eprintln!(
            "{p}: {} writes, {} collects completed",
            s.writes[p], s.collects[p]
        );
    }
    let hist: Vec<String> = s
        .register_updates
        .iter()
        .enumerate()
        .map(|(r, c)| format!("r{r}={c}"))
        .collect();
    eprintln!("register updates: {}", hist.join(" "));
}

fn verdict_exit(v: &Verdict) -> i32 {
    if v.pass {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

pub fn cmd_run(a: &RunArgs) -> Result<i32, CliError> {
    let checks = parse_checks(&a.checks.check)?;
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(budget) = a.budget {
        scenario.budget = budget;
    }
    scenario.validate()?;
    let trace = run(&scenario)?;
    if let Some(path) = &a.trace_out {
        write_file(path, &trace.to_jsonl())?;
    }
    print_stats(&trace);
    let verdict = run_checks(&trace, &checks, a.checks.per_op_budget)?;
    println!("{}", verdict.to_json());
    Ok(verdict_exit(&verdict))
}

pub fn cmd_check(a: &CheckArgs) -> Result<i32, CliError> {
    let checks = parse_checks(&a.checks.check)?;
    let file = fs::File::open(&a.trace).map_err(io_err(&a.trace))?;
    let trace = Trace::read_jsonl(BufReader::new(file))?;
    trace.scenario.validate()?;
    print_stats(&trace);
    let verdict = run_checks(&trace, &checks, a.checks.per_op_budget)?;
    println!("{}", verdict.to_json());
    Ok(verdict_exit(&verdict))
}

pub fn explore_params(a: &ExploreArgs) -> ExploreParams {
    let m = a.m.unwrap_or((a.n + a.k).saturating_sub(1));
    ExploreParams {
        n: a.n,
        k: a.k,
        m,
        threshold: a.threshold.unwrap_or(a.n.min(m)),
        depth: a.depth,
        workload_len: a.workload_len,
    }
}

pub fn cmd_explore(a: &ExploreArgs) -> Result<i32, CliError> {
    let params = explore_params(a);
    let started = Instant::now();
    let report = explore(&params, a.override_guards)?;
    eprintln!(
        "explored {} configurations to depth {} in {:.2?}",
        report.states,
        report.max_depth,
        started.elapsed()
    );
    let json = report.to_json();
    if let Some(path) = &a.report_out {
        write_file(path, &json)?;
    }
    println!("{json}");
    let found = report.violations_total > 0;
    Ok(if found == a.expect_violation {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    })
}

pub fn demo_scenario(a: &DemoArgs) -> Scenario {
    let mut s = Scenario::new(
        a.n,
        1,
        SchedulerSpec::Covering {
            victim: ProcessId(a.n as u64),
        },
        0,
        a.budget,
    );
    let m = a.m.unwrap_or(a.n.saturating_sub(1));
    s.m = Some(m);
    s.threshold = Some(a.threshold.unwrap_or(m));
    s.workload_len = Some(1);
    s
}

pub fn cmd_demo_lost_write(a: &DemoArgs) -> Result<i32, CliError> {
    if a.n < 2 {
        return Err(CliError::Usage("demo-lost-write needs n >= 2".into()));
    }
    let scenario = demo_scenario(a);
    scenario.validate()?;
    let report = covering_block_write_plan(&scenario, ProcessId(a.n as u64))?;
    let mut verdict = check_structure(&report.trace)?;
    verdict.merge(check_reading_map(&report.trace)?);
    verdict.merge(check_persistence(&report.trace)?);

    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    write_file(&a.out_dir.join("trace.jsonl"), &report.trace.to_jsonl())?;
    write_file(&a.out_dir.join("verdict.json"), &(verdict.to_json() + "\n"))?;
    let mut narrative = report.narrative.join("\n");
    narrative.push('\n');
    write_file(&a.out_dir.join("narrative.txt"), &narrative)?;

    print!("{narrative}");
    println!("{}", verdict.to_json());
    let demonstrated = verdict.has_rule(rules::LEMMA2) && verdict.has_rule(rules::PI_COMPLETENESS);
    Ok(if demonstrated { EXIT_PASS } else { EXIT_VIOLATION })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub steps: u64,
    pub crashed: usize,
    pub pass: bool,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub n: usize,
    pub k: usize,
    pub runs: u64,
    pub failures: u64,
    pub steps: u64,
    pub rows: Vec<BenchRow>,
}

pub fn bench(n: usize, k: usize, seeds: std::ops::Range<u64>, budget: u64) -> Result<BenchSummary, CliError> {
    let rows: Vec<Result<BenchRow, CliError>> = seeds
        .clone()
        .into_par_iter()
        .map(|seed| {
            let scenario = fair_random_scenario(n, k, seed, budget);
            scenario.validate()?;
            let trace = run(&scenario)?;
            let v = run_checks(
                &trace,
                &[CheckKind::Safety, CheckKind::Persistence, CheckKind::Budget],
                DEFAULT_PER_OP_BUDGET,
            )?;
            let mut rules: Vec<String> = v.violations.iter().map(|x| x.rule.clone()).collect();
            rules.sort();
            rules.dedup();
            Ok(BenchRow {
                seed,
                steps: trace.shared_steps(),
                crashed: scenario.crashes.len(),
                pass: v.pass,
                rules,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(BenchSummary {
        n,
        k,
        runs: rows.len() as u64,
        failures: rows.iter().filter(|r| !r.pass).count() as u64,
        steps: rows.iter().map(|r| r.steps).sum(),
        rows,
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32, CliError> {
    let probe = Scenario::new(a.n, a.k, SchedulerSpec::RoundRobin {}, 0, a.budget);
    probe.validate()?;
    let started = Instant::now();
    let summary = bench(a.n, a.k, a.seed..a.seed + a.seeds, a.budget)?;
    eprintln!(
        "{} runs, {} steps, {} failures in {:.2?}",
        summary.runs,
        summary.steps,
        summary.failures,
        started.elapsed()
    );
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(if summary.failures == 0 {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    })
}
