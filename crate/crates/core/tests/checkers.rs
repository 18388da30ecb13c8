mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use swmr_forge::check::{
    check_fairness, check_isomorphism, check_persistence, check_progress, check_reading_map,
    check_register_budget, check_safety_suite, check_structure, rules, CheckError,
};
use swmr_forge::model::{ProcessId, Triple};
use swmr_forge::scenario::{Scenario, SchedulerSpec};
use swmr_forge::schedule::{covering_block_write_plan, run};
use swmr_forge::sim::Simulator;
use swmr_forge::trace::{EventKind, Outcome, Trace};

use common::*;

fn honest(n: usize, k: usize, sched: SchedulerSpec, seed: u64, budget: u64) -> Trace {
    run(&Scenario::new(n, k, sched, seed, budget)).unwrap()
}

fn random(window: u64) -> SchedulerSpec {
    SchedulerSpec::Random { window }
}

fn flagged(trace: &Trace) -> BTreeSet<(&'static str, u64)> {
    let v = check_reading_map(trace).unwrap();
    v.violations
        .iter()
        .map(|x| {
            let rule = [rules::PI_COMPLETENESS, rules::PI_FRESHNESS, rules::PI_DUPLICATE]
                .into_iter()
                .find(|r| *r == x.rule)
                .expect("reading-map rule");
            (rule, x.seq)
        })
        .collect()
}

// ---- reading map ----

#[test]
fn honest_traces_satisfy_the_reading_map() {
    for seed in 0..10 {
        let t = honest(3, 2, random(4), seed, 1500);
        assert!(check_reading_map(&t).unwrap().pass);
        assert!(naive_pi_violations(&t).is_empty());
    }
}

#[test]
fn collect_omitting_a_closed_write_is_incomplete() {
    let mut t = honest(2, 1, SchedulerSpec::RoundRobin {}, 0, 200);
    let resp = mutate_drop_entry(&mut t).expect("a Collect after a closed Write");
    let v = check_reading_map(&t).unwrap();
    assert!(!v.pass);
    assert_eq!(v.first(rules::PI_COMPLETENESS).unwrap().seq, resp);
}

#[test]
fn stale_value_is_not_fresh() {
    let mut t = honest(2, 1, SchedulerSpec::RoundRobin {}, 0, 400);
    let resp = mutate_stale_value(&mut t).expect("a Collect after two closed Writes");
    let v = check_reading_map(&t).unwrap();
    assert_eq!(v.first(rules::PI_FRESHNESS).unwrap().seq, resp);
    assert!(!v.has_rule(rules::PI_COMPLETENESS));
}

#[test]
fn concurrent_write_is_admissible() {
    // p1 starts a Write and fires once (one register short of the
    // threshold); p2 collects while p1's Write is still open.
    let s = Scenario::new(2, 1, SchedulerSpec::Script { actors: vec![] }, 0, 10);
    let mut sim = Simulator::new(&s);
    sim.step(0).unwrap();
    sim.step(0).unwrap();
    sim.side_collect(1).unwrap();
    let t = sim.finish(Outcome::Scripted);
    let values = t
        .events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::OpEnd { values: Some(v), .. } => Some(v.clone()),
            _ => None,
        })
        .unwrap();
    assert_eq!(values, vec![Triple::new(1, ProcessId(1), 0)]);
    assert!(check_reading_map(&t).unwrap().pass);
    assert!(check_safety_suite(&t).unwrap().pass);
}

#[test]
fn collect_before_any_write_may_be_empty() {
    let s = Scenario::new(2, 1, SchedulerSpec::Script { actors: vec![] }, 0, 10);
    let mut sim = Simulator::new(&s);
    sim.side_collect(1).unwrap();
    let t = sim.finish(Outcome::Scripted);
    assert!(check_reading_map(&t).unwrap().pass);
}

#[test]
fn malformed_traces_are_errors() {
    let mut t = honest(2, 1, SchedulerSpec::RoundRobin {}, 0, 20);
    t.events[3].seq = 99;
    assert!(matches!(check_reading_map(&t), Err(CheckError::Malformed(_))));
    let mut t = honest(2, 1, SchedulerSpec::RoundRobin {}, 0, 20);
    t.events[2].actor = Some(ProcessId(9));
    assert!(matches!(check_reading_map(&t), Err(CheckError::Malformed(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The checker and the brute-force oracle agree on every mutated trace.
    #[test]
    fn reading_map_matches_naive_oracle(
        seed in 0u64..1000,
        n in 2usize..4,
        mutation in 0u8..3,
        skip in 0usize..6,
    ) {
        let mut t = honest(n, 1, random(4), seed, 400);
        let collects: Vec<u64> = ops(&t)
            .iter()
            .filter(|o| o.values.as_ref().is_some_and(|v| !v.is_empty()))
            .filter_map(|o| o.end)
            .collect();
        if let Some(&resp) = collects.get(skip % collects.len().max(1)) {
            let EventKind::OpEnd { values: Some(vals), .. } = &mut t.events[resp as usize].kind else {
                unreachable!()
            };
            match mutation {
                0 => { vals.remove(0); }
                1 => { let x = vals[0]; vals[0] = Triple::new(x.value + 1, x.writer, x.counter); }
                _ => { let x = vals[0]; vals.push(x); }
            }
        }
        prop_assert_eq!(flagged(&t), naive_pi_violations(&t));
    }
}

// ---- persistence ----

#[test]
fn honest_traces_persist() {
    for seed in 0..10 {
        let t = honest(2, 1, random(4), seed, 1000);
        assert!(check_persistence(&t).unwrap().pass);
    }
}

#[test]
fn uncovered_content_is_stable_in_honest_runs() {
    // Brute force over every configuration: what sits in an uncovered
    // register is there in every later configuration.
    for (n, k) in [(2, 1), (3, 2)] {
        let t = honest(n, k, random(4), 3, 300);
        let cov = coverage(&t);
        let regs = contents(&t);
        for s in 0..regs.len() {
            for r in (0..regs[s].len()).filter(|r| !cov[s].contains(r)) {
                for x in regs[s][r].iter() {
                    assert!(regs[s..].iter().all(|c| c[r].contains(x)), "{x} left r{r} after seq {s}");
                }
            }
        }
    }
}

#[test]
fn erased_uncovered_triple_breaks_stability() {
    let mut t = honest(3, 1, SchedulerSpec::RoundRobin {}, 0, 300);
    let seq = mutate_erase_uncovered(&mut t).expect("an update after uncovered content");
    let v = check_persistence(&t).unwrap();
    assert_eq!(v.first(rules::LEMMA1).unwrap().seq, seq);
}

#[test]
fn lost_write_breaks_persistence_at_the_block_write() {
    let mut s = Scenario::new(2, 1, SchedulerSpec::Covering { victim: ProcessId(2) }, 0, 1000);
    s.m = Some(1);
    s.threshold = Some(1);
    s.workload_len = Some(1);
    let report = covering_block_write_plan(&s, ProcessId(2)).unwrap();
    let block_write = report
        .trace
        .events
        .iter()
        .rev()
        .find(|e| e.actor == Some(ProcessId(1)) && matches!(e.kind, EventKind::UpdateApplied { .. }))
        .unwrap()
        .seq;
    let v = check_persistence(&report.trace).unwrap();
    assert_eq!(v.first(rules::LEMMA2).unwrap().seq, block_write);
}

/// Brute-force L1: an update at `u` drops `x` from `r` although `x` sat in
/// `r` at some earlier configuration where nobody covered `r`.
fn naive_l1(trace: &Trace) -> bool {
    let cov = coverage(trace);
    let regs = contents(trace);
    (1..regs.len()).any(|u| {
        let EventKind::UpdateApplied { index: r, .. } = trace.events[u].kind else {
            return false;
        };
        regs[u - 1][r].iter().any(|x| {
            !regs[u][r].contains(x) && (0..u).any(|s| !cov[s].contains(&r) && regs[s][r].contains(x))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stability_matches_naive_oracle(seed in 0u64..1000, pick in 0usize..10_000, drop in 0usize..50) {
        let mut t = honest(3, 2, random(4), seed, 300);
        let updates: Vec<usize> = t
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(&e.kind, EventKind::UpdateApplied { view, .. } if !view.is_empty()))
            .map(|(i, _)| i)
            .collect();
        let u = updates[pick % updates.len()];
        if let EventKind::UpdateApplied { view, .. } = &mut t.events[u].kind {
            let mut v = (**view).clone();
            let x = *v.iter().nth(drop % v.len()).unwrap();
            v.remove(&x);
            *view = std::sync::Arc::new(v);
        }
        t.recompute_digests();
        let v = check_persistence(&t).unwrap();
        prop_assert_eq!(v.has_rule(rules::LEMMA1), naive_l1(&t));
    }

    /// Persistence implies completeness for Collects invoked after a Write
    /// returned, also in under-provisioned memories where both can fail.
    #[test]
    fn persistence_implies_completeness(seed in 0u64..1000, n in 2usize..4) {
        let mut s = Scenario::new(n, 1, random(4), seed, 600);
        s.m = Some(n - 1);
        s.threshold = Some(n - 1);
        let t = run(&s).unwrap();
        if !check_persistence(&t).unwrap().has_rule(rules::LEMMA2) {
            prop_assert!(!check_reading_map(&t).unwrap().has_rule(rules::PI_COMPLETENESS));
        }
    }
}

// ---- register budget ----

fn update_indices(t: &Trace) -> Vec<usize> {
    t.events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::UpdateApplied { index, .. } => Some(index),
            _ => None,
        })
        .collect()
}

#[test]
fn k1_and_solo_stay_below_n() {
    for seed in 0..5 {
        let t = honest(3, 1, random(4), seed, 1000);
        assert!(update_indices(&t).iter().all(|&i| i < 3));
        assert!(check_register_budget(&t, 3, 1).unwrap().pass);
    }
    for k in 1..=4 {
        let t = honest(4, k, SchedulerSpec::Solo { process: ProcessId(2) }, 0, 500);
        assert!(update_indices(&t).iter().all(|&i| i < 4));
    }
}

#[test]
fn extra_registers_need_observed_contention() {
    let mut touched = false;
    for seed in 0..10 {
        let t = honest(4, 2, random(4), seed, 2000);
        for e in &t.events {
            if let EventKind::UpdateApplied { index, active, .. } = e.kind {
                if index == 4 {
                    touched = true;
                    assert!(active >= 2);
                }
            }
        }
        assert!(check_register_budget(&t, 4, 2).unwrap().pass);
    }
    assert!(touched, "contention reaches register 4");
}

#[test]
fn budget_violations_are_flagged() {
    let mut t = honest(4, 2, random(4), 0, 200);
    let e = t
        .events
        .iter_mut()
        .find(|e| matches!(e.kind, EventKind::UpdateApplied { .. }))
        .unwrap();
    if let EventKind::UpdateApplied { index, active, .. } = &mut e.kind {
        *index = 4;
        *active = 1;
    }
    let seq = e.seq;
    let v = check_register_budget(&t, 4, 2).unwrap();
    assert_eq!(v.first(rules::BUDGET_ACTIVE).unwrap().seq, seq);
    assert!(!v.has_rule(rules::BUDGET_CAP));
    let v = check_register_budget(&t, 4, 1).unwrap();
    assert_eq!(v.first(rules::BUDGET_CAP).unwrap().seq, seq);
}

// ---- structure ----

#[test]
fn flipped_update_index_is_caught() {
    let mut t = honest(3, 1, SchedulerSpec::RoundRobin {}, 0, 200);
    let seq = mutate_flip_index(&mut t).unwrap();
    let v = check_structure(&t).unwrap();
    assert_eq!(v.first(rules::ARM_MISMATCH).unwrap().seq, seq);
}

#[test]
fn tampered_digest_is_caught() {
    let mut t = honest(2, 1, SchedulerSpec::RoundRobin {}, 0, 50);
    t.events[5].mem_digest ^= 1;
    let v = check_structure(&t).unwrap();
    assert_eq!(v.first(rules::DIGEST).unwrap().seq, 5);
}

#[test]
fn collects_take_exactly_one_snapshot() {
    let t = honest(3, 2, random(4), 1, 1000);
    assert!(!check_structure(&t).unwrap().has_rule(rules::COLLECT_STEPS));
    let all = ops(&t);
    let mut collects = 0;
    for c in all.iter().filter(|o| o.op == swmr_forge::trace::OpKind::Collect) {
        let (b, e) = (c.begin as usize, c.end.unwrap() as usize);
        let snaps = t.events[b..=e]
            .iter()
            .filter(|x| x.actor == Some(c.actor) && matches!(x.kind, EventKind::SnapshotTaken { armed: None, .. }))
            .count();
        assert_eq!(snaps, 1);
        collects += 1;
    }
    assert!(collects > 0);
}

// ---- progress ----

#[test]
fn two_survivors_close_writes_within_the_frozen_budget() {
    let budget = per_op_budget();
    for seed in 0..6 {
        let t = run(&two_survivor_scenario(seed)).unwrap();
        assert!(check_progress(&t, 2, budget).unwrap().pass, "seed {seed}");
    }
}

#[test]
fn all_live_is_lock_free() {
    let t = honest(4, 2, random(4), 0, 5000);
    assert!(check_progress(&t, 2, per_op_budget()).unwrap().pass);
}

#[test]
fn solo_writer_is_obstruction_free() {
    let t = honest(2, 1, SchedulerSpec::Solo { process: ProcessId(1) }, 0, 500);
    assert!(check_progress(&t, 1, per_op_budget()).unwrap().pass);
    // Solo writes take 6 own steps: three snapshot/update pairs.
    assert!(!check_progress(&t, 1, 5).unwrap().pass);
    assert!(check_progress(&t, 1, 6).unwrap().pass);
}

#[test]
fn unfair_schedules_have_no_certificate() {
    let s = Scenario::new(2, 1, SchedulerSpec::Script { actors: vec![ProcessId(1); 20] }, 0, 20);
    let t = run(&s).unwrap();
    assert!(matches!(check_progress(&t, 1, 100), Err(CheckError::NoFairnessCertificate(_))));
}

#[test]
fn fairness_certificate_holds_for_fair_kinds() {
    for seed in 0..5 {
        let t = run(&fair_random_scenario_with_crashes(seed)).unwrap();
        assert!(check_fairness(&t).unwrap().pass);
    }
    let t = honest(3, 1, SchedulerSpec::RoundRobin {}, 0, 300);
    assert!(check_fairness(&t).unwrap().pass);
}

fn fair_random_scenario_with_crashes(seed: u64) -> Scenario {
    swmr_forge::scenario::fair_random_scenario(4, 2, seed, 3000)
}

// ---- isomorphism ----

#[test]
fn renaming_by_scaling_is_invisible() {
    let s = Scenario::new(3, 2, random(4), 5, 400);
    let map: BTreeMap<ProcessId, ProcessId> =
        [(1, 10), (2, 20), (3, 30)].map(|(a, b)| (ProcessId(a), ProcessId(b))).into_iter().collect();
    assert!(check_isomorphism(&s, &map).unwrap().pass);
}

#[test]
fn order_reversing_renaming_is_rejected() {
    let s = Scenario::new(3, 2, random(4), 5, 400);
    let map: BTreeMap<ProcessId, ProcessId> =
        [(1, 2), (2, 1), (3, 3)].map(|(a, b)| (ProcessId(a), ProcessId(b))).into_iter().collect();
    assert!(matches!(check_isomorphism(&s, &map), Err(CheckError::BadRenaming(_))));
}
