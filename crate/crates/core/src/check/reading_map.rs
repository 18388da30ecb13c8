//! The SWMR safety contract, checked by building the reading map directly.
//!
//! Triples name their Write by `(writer, counter)`, so each returned value
//! maps to exactly one Write and there is nothing to search for: the map is
//! valid iff every returned Write is the writer's last Write closed before
//! the Collect was invoked, or overlaps the Collect, and every process with
//! a closed Write before the invocation is present.

use std::collections::{BTreeMap, BTreeSet};

use super::{op_intervals, rules, CheckError, OpInterval, OpPayload, Verdict};
use crate::model::ProcessId;
use crate::trace::{OpKind, Trace};

pub fn check_reading_map(trace: &Trace) -> Result<Verdict, CheckError> {
    let intervals = op_intervals(trace)?;
    let mut writes: BTreeMap<ProcessId, BTreeMap<u64, &OpInterval>> = BTreeMap::new();
    for iv in &intervals {
        if let OpPayload::Write(t) = &iv.payload {
            writes.entry(iv.actor).or_default().insert(t.counter, iv);
        }
    }

    let mut verdict = Verdict::new();
    for c in intervals.iter().filter(|i| i.op == OpKind::Collect) {
        let (Some(resp), OpPayload::Collect(Some(values))) = (c.responded, &c.payload) else {
            continue;
        };
        let inv = c.invoked;

        let mut seen = BTreeSet::new();
        for t in values {
            if !seen.insert(t.writer) {
                verdict.flag(
                    rules::PI_DUPLICATE,
                    resp,
                    format!("{}'s Collect returns two values for {}", c.actor, t.writer),
                );
            }
        }

        for (q, ws) in &writes {
            let closed_before = ws
                .values()
                .any(|w| w.responded.is_some_and(|r| r < inv));
            if closed_before && !seen.contains(q) {
                verdict.flag(
                    rules::PI_COMPLETENESS,
                    resp,
                    format!(
                        "{}'s Collect (invoked at {inv}) omits {q}, which completed a Write before it",
                        c.actor
                    ),
                );
            }
        }

        for t in values {
            let Some(w) = writes.get(&t.writer).and_then(|ws| ws.get(&t.counter)) else {
                verdict.flag(
                    rules::PI_FRESHNESS,
                    resp,
                    format!("{}'s Collect returns {t}, which no Write produced", c.actor),
                );
                continue;
            };
            if w.payload != OpPayload::Write(*t) {
                verdict.flag(
                    rules::PI_FRESHNESS,
                    resp,
                    format!("{}'s Collect returns {t}, but that Write wrote {:?}", c.actor, w.payload),
                );
                continue;
            }
            let last_closed = writes[&t.writer]
                .iter()
                .filter(|(_, w)| w.responded.is_some_and(|r| r < inv))
                .map(|(c, _)| *c)
                .max();
            let overlaps = w.invoked <= resp && w.responded.is_none_or(|r| r >= inv);
            if last_closed != Some(t.counter) && !overlaps {
                verdict.flag(
                    rules::PI_FRESHNESS,
                    resp,
                    format!(
                        "{}'s Collect returns {t}, but {}'s last Write closed before it has counter {last_closed:?}",
                        c.actor, t.writer
                    ),
                );
            }
        }
    }
    Ok(verdict)
}
