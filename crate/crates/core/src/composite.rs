//! Per-consumer buffering of chunks arriving over several paths.
//!
//! Chunks with the same number wait in per-key queues until every configured
//! key has delivered one, at which point the set is released for merging.
//! Edges deliver in order, so a chunk numbered `m` on a key whose previous
//! chunk was `j < m - 1` proves that `j + 1 ..= m - 1` will never arrive on
//! that key. Those numbers are dead: buffered chunks carrying them are
//! discarded, `expected_next` moves past them, and later arrivals are stale.
//! A set therefore completes exactly when every key delivers its number,
//! whatever the interleaving of the paths.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chunk::{DataChunk, SourceKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BufferError {
    #[error("chunk from unconfigured source {0}")]
    UnknownKey(SourceKey),
    #[error("stale chunk {number} from {key}; expecting {expected_next} or later")]
    StaleChunk {
        key: SourceKey,
        number: u64,
        expected_next: u64,
    },
    #[error("chunk {number} from {key} arrived after chunk {last_seen} on the same edge")]
    OutOfOrder {
        key: SourceKey,
        number: u64,
        last_seen: u64,
    },
}

impl BufferError {
    /// Stale chunks are expected after a fast-forward and are only counted.
    pub fn is_warning(&self) -> bool {
        matches!(self, BufferError::StaleChunk { .. })
    }
}

/// Counters exposed in run statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BufferCounters {
    pub accepted: u64,
    pub completed: u64,
    pub discarded: u64,
    pub stale: u64,
    pub fast_forwards: u64,
    pub abandoned: u64,
    pub max_occupancy: usize,
}

/// All chunks of one number, one per configured key.
#[derive(Debug, Clone)]
pub struct CompletedSet {
    pub number: u64,
    pub chunks: BTreeMap<SourceKey, Arc<DataChunk>>,
}

impl CompletedSet {
    pub fn iter(&self) -> impl Iterator<Item = &DataChunk> {
        self.chunks.values().map(|c| c.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct InFlightBuffer {
    queues: BTreeMap<SourceKey, VecDeque<Arc<DataChunk>>>,
    last_seen: BTreeMap<SourceKey, u64>,
    /// Numbers at or above `expected_next` known to be missing on some edge.
    dead: BTreeSet<u64>,
    expected_next: u64,
    counters: BufferCounters,
}

impl InFlightBuffer {
    pub fn new(keys: impl IntoIterator<Item = SourceKey>) -> Self {
        Self {
            queues: keys.into_iter().map(|k| (k, VecDeque::new())).collect(),
            last_seen: BTreeMap::new(),
            dead: BTreeSet::new(),
            expected_next: 0,
            counters: BufferCounters::default(),
        }
    }

    pub fn configured_keys(&self) -> BTreeSet<SourceKey> {
        self.queues.keys().cloned().collect()
    }

    pub fn expected_next(&self) -> u64 {
        self.expected_next
    }

    pub fn counters(&self) -> BufferCounters {
        self.counters
    }

    pub fn occupancy(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    /// Smallest number currently buffered on any queue.
    pub fn oldest_pending(&self) -> Option<u64> {
        self.queues.values().filter_map(|q| q.front()).map(|c| c.number).min()
    }

    pub fn queued_numbers(&self, key: &SourceKey) -> Vec<u64> {
        self.queues
            .get(key)
            .map(|q| q.iter().map(|c| c.number).collect())
            .unwrap_or_default()
    }

    /// Enqueues a chunk and returns the set it completes, if any.
    pub fn accept(&mut self, chunk: Arc<DataChunk>) -> Result<Option<CompletedSet>, BufferError> {
        let key = chunk.key.clone();
        let number = chunk.number;
        if !self.queues.contains_key(&key) {
            return Err(BufferError::UnknownKey(key));
        }
        if number < self.expected_next || self.dead.contains(&number) {
            self.counters.stale += 1;
            let seen = self.last_seen.entry(key.clone()).or_insert(number);
            *seen = (*seen).max(number);
            return Err(BufferError::StaleChunk {
                key,
                number,
                expected_next: self.expected_next,
            });
        }
        if let Some(&last) = self.last_seen.get(&key) {
            if number <= last {
                return Err(BufferError::OutOfOrder {
                    key,
                    number,
                    last_seen: last,
                });
            }
        }
        let previous = self.last_seen.insert(key.clone(), number);
        // Numbers skipped on this edge will never arrive on it, so their
        // sets can never complete.
        let first_missing = previous.map_or(self.expected_next, |last| last + 1);
        if number > first_missing {
            self.mark_lost(first_missing.max(self.expected_next)..number);
        }

        self.counters.accepted += 1;
        self.queues
            .get_mut(&key)
            .expect("key checked above")
            .push_back(chunk);
        self.counters.max_occupancy = self.counters.max_occupancy.max(self.occupancy());
        Ok(self.take_complete())
    }

    fn mark_lost(&mut self, lost: std::ops::Range<u64>) {
        if lost.is_empty() {
            return;
        }
        self.counters.fast_forwards += 1;
        let dead = &mut self.dead;
        dead.extend(lost);
        for q in self.queues.values_mut() {
            let before = q.len();
            q.retain(|c| !dead.contains(&c.number));
            self.counters.discarded += (before - q.len()) as u64;
        }
        while self.dead.remove(&self.expected_next) {
            self.expected_next += 1;
        }
    }

    fn take_complete(&mut self) -> Option<CompletedSet> {
        let mut fronts = self.queues.values().map(|q| q.front().map(|c| c.number));
        let first = fronts.next()??;
        if !fronts.all(|n| n == Some(first)) {
            return None;
        }
        let chunks = self
            .queues
            .iter_mut()
            .map(|(k, q)| (k.clone(), q.pop_front().expect("front checked")))
            .collect();
        self.expected_next = first + 1;
        self.dead = self.dead.split_off(&self.expected_next);
        self.counters.completed += 1;
        Some(CompletedSet {
            number: first,
            chunks,
        })
    }

    /// Drops every queued chunk numbered below `to` and moves
    /// `expected_next` up to `to`. No-op when `to <= expected_next`.
    pub fn fast_forward(&mut self, to: u64) {
        if to <= self.expected_next {
            return;
        }
        for q in self.queues.values_mut() {
            while q.front().is_some_and(|c| c.number < to) {
                q.pop_front();
                self.counters.discarded += 1;
            }
        }
        self.expected_next = to;
        self.dead = self.dead.split_off(&to);
        while self.dead.remove(&self.expected_next) {
            self.expected_next += 1;
        }
        self.counters.fast_forwards += 1;
    }

    /// Gives up on the oldest incomplete set (watchdog path). Returns the
    /// abandoned number.
    pub fn abandon_oldest(&mut self) -> Option<u64> {
        let oldest = self.oldest_pending()?;
        self.fast_forward(oldest + 1);
        self.counters.abandoned += 1;
        Some(oldest)
    }
}
