//! Merging a complete set of same-numbered chunks into one aligned
//! [`MergedChunk`].
//!
//! The merged continuity is decided first ([`decide_continuity`]); then every
//! input is sliced by one of three rules depending on its own continuity and
//! the merged one ([`classify_scenario`], [`merge_array`]):
//!
//! | scenario                | kept columns                                   |
//! |-------------------------|------------------------------------------------|
//! | regular continuous      | previous tail (`d_H` cols) + `[0, e - d_H)`    |
//! | regular discontinuous   | `[d_L, e - d_H)`                               |
//! | irregular discontinuous | `[d_l, e - d_H)`                               |
//!
//! With cumulative counters `(p, d)` a continuous chunk for input interval
//! `[a, b)` covers `[a - p, b - p)` and a discontinuous one `[a + d, b - p)`.
//! All three rules map their input onto the merged chunk's interval, so every
//! merged payload has the same extent.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{drop_counts, merge_params, AlignmentError, DropCounts};
use crate::chunk::{AlignmentParams, Continuity, DataChunk, Payload, SourceKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("invalid chunk offered to merge")]
    InvalidInMerge,
    #[error("merge of chunk {number} has no inputs")]
    NoInputs { number: u64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(
        "merging chunk {number} of {key} leaves no valid columns; chunks must \
         hold at least {minimum_len} time steps"
    )]
    EmptyResult {
        key: SourceKey,
        number: u64,
        minimum_len: u64,
    },
    #[error("regular continuous merge of {key} without a carried tail of {expected} columns")]
    MissingTail { key: SourceKey, expected: usize },
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

/// How one input is sliced into a merged chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MergeScenario {
    RegularContinuous,
    RegularDiscontinuous,
    IrregularDiscontinuous,
}

impl fmt::Display for MergeScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeScenario::RegularContinuous => "RegularContinuous",
            MergeScenario::RegularDiscontinuous => "RegularDiscontinuous",
            MergeScenario::IrregularDiscontinuous => "IrregularDiscontinuous",
        })
    }
}

/// Merged continuity: `Discontinuous` unless this set directly follows the
/// last completed one and every input is of the withprevious subtype.
pub fn decide_continuity(
    number: u64,
    last_completed: Option<u64>,
    incoming: &[Continuity],
) -> Result<Continuity, MergeError> {
    if incoming.iter().any(|c| c.is_invalid()) {
        return Err(MergeError::InvalidInMerge);
    }
    if incoming.is_empty() {
        return Err(MergeError::NoInputs { number });
    }
    let consecutive = last_completed.and_then(|l| l.checked_add(1)) == Some(number);
    if !consecutive || incoming.iter().any(|c| c.is_discontinuous_subtype()) {
        Ok(Continuity::Discontinuous)
    } else {
        Ok(Continuity::WithPrevious)
    }
}

/// Refines the base decision into the flag carried by outgoing chunks:
/// `newfile` and `calibrationChunk` survive a discontinuous merge when every
/// input carries them, `last` survives a continuous merge when any input
/// carries it.
pub fn refine_continuity(base: Continuity, incoming: &[Continuity]) -> Continuity {
    if base.is_discontinuous_subtype() {
        for special in [Continuity::NewFile, Continuity::CalibrationChunk] {
            if !incoming.is_empty() && incoming.iter().all(|&c| c == special) {
                return special;
            }
        }
        Continuity::Discontinuous
    } else if incoming.contains(&Continuity::Last) {
        Continuity::Last
    } else {
        Continuity::WithPrevious
    }
}

pub fn classify_scenario(
    chunk: Continuity,
    merged: Continuity,
) -> Result<MergeScenario, MergeError> {
    if chunk.is_invalid() || merged.is_invalid() {
        return Err(MergeError::InvalidInMerge);
    }
    match (chunk.is_withprevious_subtype(), merged.is_withprevious_subtype()) {
        (true, true) => Ok(MergeScenario::RegularContinuous),
        (false, false) => Ok(MergeScenario::RegularDiscontinuous),
        (true, false) => Ok(MergeScenario::IrregularDiscontinuous),
        (false, true) => Err(MergeError::Protocol(format!(
            "{chunk} chunk cannot be merged into a {merged} result"
        ))),
    }
}

fn empty_result(number: u64) -> MergeError {
    MergeError::EmptyResult {
        key: SourceKey::new("?", "?"),
        number,
        minimum_len: 0,
    }
}

/// Slices one input array according to `scenario`.
///
/// `prev_tail` must hold the last `drops.high` columns of the previous chunk
/// for the regular continuous rule; it is ignored otherwise.
pub fn merge_array(
    scenario: MergeScenario,
    prev_tail: Option<&Payload>,
    current: &Payload,
    drops: DropCounts,
) -> Result<Payload, MergeError> {
    let e = current.time_len();
    let end = e.checked_sub(drops.high).ok_or_else(|| empty_result(0))?;
    match scenario {
        MergeScenario::RegularContinuous => {
            let head = current.slice_time(0..end);
            if drops.high == 0 {
                if end == 0 {
                    return Err(empty_result(0));
                }
                return Ok(head);
            }
            let tail = prev_tail
                .filter(|t| t.time_len() == drops.high)
                .ok_or_else(|| MergeError::MissingTail {
                    key: SourceKey::new("?", "?"),
                    expected: drops.high,
                })?;
            tail.concat_time(&head).ok_or_else(|| {
                MergeError::Protocol("carried tail does not match the current payload shape".into())
            })
        }
        MergeScenario::RegularDiscontinuous | MergeScenario::IrregularDiscontinuous => {
            let start = if scenario == MergeScenario::RegularDiscontinuous {
                drops.low
            } else {
                drops.low_irregular
            };
            if start >= end {
                return Err(empty_result(0));
            }
            Ok(current.slice_time(start..end))
        }
    }
}

/// One input of a merged chunk, sliced to the merged interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedInput {
    pub payload: Payload,
    pub scenario: MergeScenario,
    /// Continuity of the chunk as it arrived.
    pub source_continuity: Continuity,
    /// Cumulative alignment of the chunk as it arrived.
    pub source_alignment: AlignmentParams,
    pub sample_rate: f64,
    pub channel_freqs: Option<Vec<f64>>,
}

/// The aligned result of one completed set.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedChunk {
    pub number: u64,
    /// Refined flag (see [`refine_continuity`]); never invalid.
    pub continuity: Continuity,
    pub alignment: AlignmentParams,
    pub inputs: BTreeMap<SourceKey, MergedInput>,
}

impl MergedChunk {
    pub fn time_len(&self) -> usize {
        self.inputs
            .values()
            .next()
            .map(|i| i.payload.time_len())
            .unwrap_or(0)
    }

    pub fn get(&self, key: &SourceKey) -> Option<&MergedInput> {
        self.inputs.get(key)
    }

    /// Looks an input up by feature name alone.
    pub fn feature(&self, feature: &str) -> Option<&MergedInput> {
        self.inputs
            .iter()
            .find(|(k, _)| k.feature == feature)
            .map(|(_, v)| v)
    }

    pub fn sample_rate(&self) -> f64 {
        self.inputs.values().next().map(|i| i.sample_rate).unwrap_or(0.0)
    }

    pub fn scenarios(&self) -> BTreeMap<SourceKey, MergeScenario> {
        self.inputs.iter().map(|(k, v)| (k.clone(), v.scenario)).collect()
    }
}

/// Per-consumer merge state: the last completed number and the tails kept
/// for the next regular continuous merge.
#[derive(Debug, Clone, Default)]
pub struct MergeState {
    last_completed: Option<u64>,
    tails: BTreeMap<SourceKey, Payload>,
}

impl MergeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_completed(&self) -> Option<u64> {
        self.last_completed
    }

    pub fn tail(&self, key: &SourceKey) -> Option<&Payload> {
        self.tails.get(key)
    }

    pub fn carried_keys(&self) -> usize {
        self.tails.len()
    }

    /// Merges a complete set of chunks numbered `number`.
    ///
    /// On error the state is left untouched.
    pub fn complete_merge<'a, I>(&mut self, set: I, number: u64) -> Result<MergedChunk, MergeError>
    where
        I: IntoIterator<Item = &'a DataChunk>,
    {
        let chunks: Vec<&DataChunk> = set.into_iter().collect();
        if chunks.is_empty() {
            return Err(MergeError::NoInputs { number });
        }
        if let Some(c) = chunks.iter().find(|c| c.number != number) {
            return Err(MergeError::Protocol(format!(
                "chunk {} of {} offered for set {number}",
                c.number, c.key
            )));
        }
        let rate = chunks[0].sample_rate;
        if chunks.iter().any(|c| c.sample_rate != rate) {
            return Err(MergeError::Protocol(format!(
                "inputs of set {number} have different sample rates"
            )));
        }
        let flags: Vec<Continuity> = chunks.iter().map(|c| c.continuity).collect();
        let base = decide_continuity(number, self.last_completed, &flags)?;
        let alignment = merge_params(chunks.iter().map(|c| &c.alignment))?;
        let minimum_len = alignment.time_extent() + 1;

        let mut inputs = BTreeMap::new();
        let mut tails = BTreeMap::new();
        for chunk in &chunks {
            let scenario = classify_scenario(chunk.continuity, base)?;
            let drops = drop_counts(alignment, chunk.alignment)?;
            let prev = if scenario == MergeScenario::RegularContinuous {
                self.tails.get(&chunk.key)
            } else {
                None
            };
            let payload =
                merge_array(scenario, prev, &chunk.payload, drops).map_err(|e| match e {
                    MergeError::EmptyResult { .. } => MergeError::EmptyResult {
                        key: chunk.key.clone(),
                        number,
                        minimum_len,
                    },
                    MergeError::MissingTail { expected, .. } => MergeError::MissingTail {
                        key: chunk.key.clone(),
                        expected,
                    },
                    other => other,
                })?;
            let e = chunk.payload.time_len();
            if drops.high > 0 {
                if drops.high > e {
                    return Err(MergeError::EmptyResult {
                        key: chunk.key.clone(),
                        number,
                        minimum_len,
                    });
                }
                tails.insert(chunk.key.clone(), chunk.payload.slice_time(e - drops.high..e));
            }
            inputs.insert(
                chunk.key.clone(),
                MergedInput {
                    payload,
                    scenario,
                    source_continuity: chunk.continuity,
                    source_alignment: chunk.alignment,
                    sample_rate: chunk.sample_rate,
                    channel_freqs: chunk.channel_freqs.clone(),
                },
            );
        }
        let mut lens = inputs.values().map(|i| i.payload.time_len());
        let first = lens.next().unwrap_or(0);
        if lens.any(|l| l != first) {
            return Err(MergeError::Protocol(format!(
                "merged payloads of set {number} differ in time extent"
            )));
        }

        self.last_completed = Some(number);
        self.tails = tails;
        Ok(MergedChunk {
            number,
            continuity: refine_continuity(base, &flags),
            alignment,
            inputs,
        })
    }
}
