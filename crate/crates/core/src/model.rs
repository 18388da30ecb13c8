//! Value-level domain types: process ids, write triples and views.
//!
//! A [`View`] is the full-information state a process carries around and
//! writes into registers. It is a set of [`Triple`]s kept sorted by
//! `(writer, counter, value)` so that equal views serialize to equal bytes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed view: writer {writer} has two values ({first}, {second}) for counter {counter}")]
    ConflictingTriples {
        writer: ProcessId,
        counter: u64,
        first: u64,
        second: u64,
    },
}

/// Process identifier drawn from the positive integers.
///
/// Serialized as a bare integer. Deserialization also accepts a decimal
/// string, which is how integer map keys arrive through buffered content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ProcessId(pub u64);

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = ProcessId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a process id")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<ProcessId, E> {
                Ok(ProcessId(v))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<ProcessId, E> {
                u64::try_from(v).map(ProcessId).map_err(E::custom)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<ProcessId, E> {
                v.parse().map(ProcessId).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl std::str::FromStr for ProcessId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim_start_matches('p').parse().map(ProcessId)
    }
}

/// One abstract Write: `value` written by `writer` as its `counter`-th Write.
///
/// Field order matters: the derived ordering is `(writer, counter, value)`,
/// which is the canonical order of a [`View`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u64, u64, u64)", into = "(u64, u64, u64)")]
pub struct Triple {
    pub writer: ProcessId,
    pub counter: u64,
    pub value: u64,
}

impl Triple {
    pub fn new(value: u64, writer: ProcessId, counter: u64) -> Self {
        Triple {
            writer,
            counter,
            value,
        }
    }
}

impl From<(u64, u64, u64)> for Triple {
    fn from((value, writer, counter): (u64, u64, u64)) -> Self {
        Triple::new(value, ProcessId(writer), counter)
    }
}

impl From<Triple> for (u64, u64, u64) {
    fn from(t: Triple) -> Self {
        (t.value, t.writer.0, t.counter)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.value, self.writer, self.counter)
    }
}

/// A set of triples, stored sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Triple>", into = "Vec<Triple>")]
pub struct View {
    triples: Vec<Triple>,
}

impl From<Vec<Triple>> for View {
    fn from(mut triples: Vec<Triple>) -> Self {
        triples.sort_unstable();
        triples.dedup();
        View { triples }
    }
}

impl From<View> for Vec<Triple> {
    fn from(v: View) -> Self {
        v.triples
    }
}

impl FromIterator<Triple> for View {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        View::from(iter.into_iter().collect::<Vec<_>>())
    }
}

impl View {
    pub fn new() -> Self {
        View::default()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }

    pub fn as_slice(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn insert(&mut self, t: Triple) -> bool {
        match self.triples.binary_search(&t) {
            Ok(_) => false,
            Err(pos) => {
                self.triples.insert(pos, t);
                true
            }
        }
    }

    pub fn remove(&mut self, t: &Triple) -> bool {
        match self.triples.binary_search(t) {
            Ok(pos) => {
                self.triples.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// Set union, in place. Linear in the size of both views.
    pub fn merge_in(&mut self, other: &View) {
        if other.triples.is_empty() {
            return;
        }
        if self.triples.is_empty() {
            self.triples = other.triples.clone();
            return;
        }
        let (a, b) = (&self.triples, &other.triples);
        if self.is_superset_of(other) {
            return;
        }
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        self.triples = out;
    }

    /// Checks that no writer has two different values under one counter.
    pub fn validate(&self) -> Result<(), ModelError> {
        for w in self.triples.windows(2) {
            if w[0].writer == w[1].writer && w[0].counter == w[1].counter {
                return Err(ModelError::ConflictingTriples {
                    writer: w[0].writer,
                    counter: w[0].counter,
                    first: w[0].value,
                    second: w[1].value,
                });
            }
        }
        Ok(())
    }

    /// Whether every triple of `other` is in `self`. Linear.
    pub fn is_superset_of(&self, other: &View) -> bool {
        let (a, b) = (&self.triples, &other.triples);
        if b.len() > a.len() {
            return false;
        }
        let mut i = 0;
        for t in b {
            while i < a.len() && a[i] < *t {
                i += 1;
            }
            if i == a.len() || a[i] != *t {
                return false;
            }
            i += 1;
        }
        true
    }

    /// For each writer, the triple with the largest counter (the last of its
    /// run), in writer order. Takes O(writers * log len).
    pub fn latest(&self) -> Latest<'_> {
        Latest {
            triples: &self.triples,
        }
    }

    /// Triples written by `writer`, in counter order.
    pub fn by_writer(&self, writer: ProcessId) -> &[Triple] {
        let lo = self.triples.partition_point(|t| t.writer < writer);
        let hi = self.triples.partition_point(|t| t.writer <= writer);
        &self.triples[lo..hi]
    }
}

impl<'a> IntoIterator for &'a View {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

/// Iterator behind [`View::latest`].
pub struct Latest<'a> {
    triples: &'a [Triple],
}

impl Iterator for Latest<'_> {
    type Item = Triple;

    fn next(&mut self) -> Option<Triple> {
        let w = self.triples.first()?.writer;
        let end = self.triples.partition_point(|t| t.writer <= w);
        let last = self.triples[end - 1];
        self.triples = &self.triples[end..];
        Some(last)
    }
}

pub fn merge_views(a: &View, b: &View) -> View {
    let mut out = a.clone();
    out.merge_in(b);
    out
}

/// For every writer present in `v`, its triple with the largest counter.
pub fn latest_per_process(v: &View) -> Result<BTreeMap<ProcessId, Triple>, ModelError> {
    latest_in(v.iter())
}

/// Same as [`latest_per_process`] over the union of several views, without
/// materializing the union.
pub fn latest_in<'a, I>(triples: I) -> Result<BTreeMap<ProcessId, Triple>, ModelError>
where
    I: IntoIterator<Item = &'a Triple>,
{
    let mut out: BTreeMap<ProcessId, Triple> = BTreeMap::new();
    for t in triples {
        match out.get_mut(&t.writer) {
            None => {
                out.insert(t.writer, *t);
            }
            Some(best) => {
                if t.counter == best.counter && t.value != best.value {
                    return Err(ModelError::ConflictingTriples {
                        writer: t.writer,
                        counter: t.counter,
                        first: best.value.min(t.value),
                        second: best.value.max(t.value),
                    });
                }
                if t.counter > best.counter {
                    *best = *t;
                }
            }
        }
    }
    Ok(out)
}

/// [`latest_in`] over the union of whole views, using each view's sorted
/// order: only the last triple of each writer run is examined, so a
/// conflict is reported only at a writer's largest counter.
pub fn latest_of_views<'a, I>(views: I) -> Result<BTreeMap<ProcessId, Triple>, ModelError>
where
    I: IntoIterator<Item = &'a View>,
{
    let mut out: BTreeMap<ProcessId, Triple> = BTreeMap::new();
    for v in views {
        let s = v.as_slice();
        let mut end = 0;
        for t in v.latest() {
            end += v.by_writer(t.writer).len();
            if end >= 2 && s[end - 2].writer == t.writer && s[end - 2].counter == t.counter {
                return Err(conflict(&s[end - 2], &t));
            }
            match out.get_mut(&t.writer) {
                None => {
                    out.insert(t.writer, t);
                }
                Some(best) if best.counter == t.counter && best.value != t.value => {
                    return Err(conflict(best, &t));
                }
                Some(best) if t.counter > best.counter => *best = t,
                Some(_) => {}
            }
        }
    }
    Ok(out)
}

fn conflict(a: &Triple, b: &Triple) -> ModelError {
    ModelError::ConflictingTriples {
        writer: a.writer,
        counter: a.counter,
        first: a.value.min(b.value),
        second: a.value.max(b.value),
    }
}
