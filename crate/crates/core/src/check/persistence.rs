//! Register content stability (L1) and persistence of completed Writes (L2).
//!
//! Positions are configurations: configuration `s` is the state right after
//! event `s`. A writer covers its armed register from its snapshot event up
//! to (not including) its update event.
//!
//! L1: a triple present in an uncovered register stays there forever. An
//! update that removes triple `x` from register `r` is a violation iff `r`
//! was uncovered at some configuration while `x` sat in it before the
//! updater armed.
//!
//! L2: once a Write has returned, some register holds its triple.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use super::{rules, CheckError, Verdict};
use crate::model::{ProcessId, Triple, View};
use crate::trace::{EventKind, OpKind, Trace};

/// Uncovered periods of one register as half-open `[start, end)` ranges.
#[derive(Debug, Default)]
struct Uncovered {
    spans: Vec<(u64, u64)>,
}

impl Uncovered {
    fn open(&mut self, at: u64) {
        self.spans.push((at, u64::MAX));
    }

    fn close(&mut self, at: u64) {
        if let Some(last) = self.spans.last_mut() {
            if last.1 == u64::MAX {
                last.1 = at;
            }
        }
    }

    /// Some uncovered configuration in `[lo, hi]`.
    fn any_in(&self, lo: u64, hi: u64) -> Option<u64> {
        if lo > hi {
            return None;
        }
        let idx = self.spans.partition_point(|&(s, _)| s <= hi);
        let &(s, e) = self.spans[..idx].last()?;
        (e > lo).then(|| s.max(lo))
    }
}

fn diff(old: &View, new: &View) -> (Vec<Triple>, Vec<Triple>) {
    let (a, b) = (old.as_slice(), new.as_slice());
    let (mut removed, mut added) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                removed.push(*x);
                i += 1;
            }
            (Some(_), Some(y)) => {
                added.push(*y);
                j += 1;
            }
            (Some(x), None) => {
                removed.push(*x);
                i += 1;
            }
            (None, Some(y)) => {
                added.push(*y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (removed, added)
}

pub fn check_persistence(trace: &Trace) -> Result<Verdict, CheckError> {
    let m = trace.scenario.registers();
    let mut verdict = Verdict::new();

    let mut registers: Vec<Arc<View>> = vec![Arc::new(View::new()); m];
    let mut since: Vec<HashMap<Triple, u64>> = vec![HashMap::new(); m];
    let mut cover: Vec<usize> = vec![0; m];
    let mut uncovered: Vec<Uncovered> = (0..m).map(|_| Uncovered::default()).collect();
    for u in &mut uncovered {
        u.open(0);
    }
    let mut armed: BTreeMap<ProcessId, (usize, u64)> = BTreeMap::new();
    let mut occurrences: HashMap<Triple, usize> = HashMap::new();
    let mut closed: HashSet<Triple> = HashSet::new();

    let bad_index = |seq: u64, index: usize| {
        CheckError::Malformed(format!("seq {seq}: register {index} out of range (m = {m})"))
    };

    for e in &trace.events {
        let s = e.seq;
        let mut changed: Option<usize> = None;
        match (&e.kind, e.actor) {
            (EventKind::SnapshotTaken { armed: Some(r), .. }, Some(p)) => {
                if *r >= m {
                    return Err(bad_index(s, *r));
                }
                armed.insert(p, (*r, s));
                cover[*r] += 1;
                changed = Some(*r);
            }
            (EventKind::UpdateApplied { index, view, .. }, Some(p)) => {
                let r = *index;
                if r >= m {
                    return Err(bad_index(s, r));
                }
                // Configurations before this event during which p covered r.
                let covered_from = match armed.remove(&p) {
                    Some((ar, a)) if ar == r => {
                        cover[r] -= 1;
                        a
                    }
                    Some((ar, _)) => {
                        cover[ar] -= 1;
                        if cover[ar] == 0 {
                            uncovered[ar].open(s);
                        }
                        s
                    }
                    None => s,
                };
                let (removed, added) = diff(&registers[r], view);
                for x in removed {
                    let from = since[r].remove(&x).unwrap_or(0);
                    if let Some(t) = uncovered[r].any_in(from, covered_from.saturating_sub(1)) {
                        verdict.flag(
                            rules::LEMMA1,
                            s,
                            format!(
                                "{p} overwrites register {r} dropping {x}; {x} was there since seq {from} and the register was uncovered at seq {t}"
                            ),
                        );
                    }
                    let n = occurrences.get_mut(&x).expect("tracked");
                    *n -= 1;
                    if *n == 0 && closed.contains(&x) {
                        verdict.flag(
                            rules::LEMMA2,
                            s,
                            format!("completed Write {x} no longer appears in any register"),
                        );
                    }
                }
                for x in added {
                    since[r].insert(x, s);
                    *occurrences.entry(x).or_insert(0) += 1;
                }
                registers[r] = view.clone();
                changed = Some(r);
            }
            (EventKind::Crash { .. }, Some(p)) => {
                if let Some((r, _)) = armed.remove(&p) {
                    cover[r] -= 1;
                    changed = Some(r);
                }
            }
            (
                EventKind::OpEnd {
                    op: OpKind::Write,
                    triple: Some(x),
                    ..
                },
                Some(_),
            ) => {
                closed.insert(*x);
                if occurrences.get(x).copied().unwrap_or(0) == 0 {
                    verdict.flag(
                        rules::LEMMA2,
                        s,
                        format!("Write {x} returns while no register holds it"),
                    );
                }
            }
            _ => {}
        }
        if let Some(r) = changed {
            let now_uncovered = cover[r] == 0;
            let was_uncovered = uncovered[r].spans.last().is_some_and(|&(_, e)| e == u64::MAX);
            match (was_uncovered, now_uncovered) {
                (true, false) => uncovered[r].close(s),
                (false, true) => uncovered[r].open(s),
                _ => {}
            }
        }
    }
    Ok(verdict)
}
