//! Scripted fault injection.
//!
//! A schedule is a list of events keyed by chunk number, so a run with a
//! given schedule is reproducible. Edge faults act on the chunk stream of
//! one edge above the codec; overflows are handed to the named input node.
//!
//! ```toml
//! [[faults]]
//! type = "drop_chunk"
//! edge = "se.T -> ptn"
//! number = 2
//!
//! [[faults]]
//! type = "overflow_at"
//! input = "mic"
//! number = 5
//!
//! [[faults]]
//! type = "link_down"
//! edge = "fb.E -> ptn"
//! from = 10
//! to = 14
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use tfstream_core::{DataChunk, SourceKey};

use crate::error::FaultError;
use crate::frame::{decode, encode};

/// `producer.feature -> consumer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub from: SourceKey,
    pub to: String,
}

impl EdgeId {
    pub fn new(from: SourceKey, to: impl Into<String>) -> Self {
        Self { from, to: to.into() }
    }

    pub fn parse(s: &str) -> Result<Self, FaultError> {
        let bad = || FaultError::BadEdge(s.to_string());
        let (from, to) = s.split_once("->").ok_or_else(bad)?;
        let from = SourceKey::parse(from.trim()).ok_or_else(bad)?;
        let to = to.trim();
        if to.is_empty() || to.contains(char::is_whitespace) {
            return Err(bad());
        }
        Ok(Self::new(from, to))
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultEvent {
    /// The chunk never reaches the consumer.
    DropChunk { edge: String, number: u64 },
    /// One payload byte of the encoded frame is flipped in transit; the
    /// receiver's checksum rejects it.
    CorruptChunk { edge: String, number: u64 },
    /// Acquisition of this chunk overflows at the input node.
    OverflowAt { input: String, number: u64 },
    /// The link is down for chunks `from..=to`; it resumes fresh.
    LinkDown { edge: String, from: u64, to: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
}

/// What happens to one chunk on one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeAction {
    Deliver,
    Drop,
    Corrupt,
}

/// Faults of a single edge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeFaults {
    dropped: BTreeSet<u64>,
    corrupted: BTreeSet<u64>,
    down: Vec<(u64, u64)>,
}

impl EdgeFaults {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty() && self.corrupted.is_empty() && self.down.is_empty()
    }

    pub fn action(&self, number: u64) -> EdgeAction {
        if self.dropped.contains(&number) || self.down.iter().any(|&(a, b)| (a..=b).contains(&number))
        {
            EdgeAction::Drop
        } else if self.corrupted.contains(&number) {
            EdgeAction::Corrupt
        } else {
            EdgeAction::Deliver
        }
    }
}

impl FaultSchedule {
    pub fn new(events: Vec<FaultEvent>) -> Self {
        Self { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks every event against the graph's edges and input nodes.
    pub fn validate(&self, edges: &[EdgeId], inputs: &[&str]) -> Result<(), FaultError> {
        for ev in &self.events {
            match ev {
                FaultEvent::DropChunk { edge, .. } | FaultEvent::CorruptChunk { edge, .. } => {
                    check_edge(edge, edges)?;
                }
                FaultEvent::LinkDown { edge, from, to } => {
                    check_edge(edge, edges)?;
                    if from > to {
                        return Err(FaultError::EmptyRange { from: *from, to: *to });
                    }
                }
                FaultEvent::OverflowAt { input, .. } => {
                    if !inputs.contains(&input.as_str()) {
                        return Err(FaultError::UnknownInput(input.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn for_edge(&self, edge: &EdgeId) -> EdgeFaults {
        let mut f = EdgeFaults::default();
        let matches = |e: &str| EdgeId::parse(e).is_ok_and(|e| &e == edge);
        for ev in &self.events {
            match ev {
                FaultEvent::DropChunk { edge, number } if matches(edge) => {
                    f.dropped.insert(*number);
                }
                FaultEvent::CorruptChunk { edge, number } if matches(edge) => {
                    f.corrupted.insert(*number);
                }
                FaultEvent::LinkDown { edge, from, to } if matches(edge) => {
                    f.down.push((*from, *to));
                }
                _ => {}
            }
        }
        f
    }

    /// Chunk numbers at which `input` overflows.
    pub fn overflows(&self, input: &str) -> BTreeSet<u64> {
        self.events
            .iter()
            .filter_map(|ev| match ev {
                FaultEvent::OverflowAt { input: i, number } if i == input => Some(*number),
                _ => None,
            })
            .collect()
    }
}

fn check_edge(edge: &str, edges: &[EdgeId]) -> Result<(), FaultError> {
    let id = EdgeId::parse(edge)?;
    if edges.contains(&id) {
        Ok(())
    } else {
        Err(FaultError::UnknownEdge(edge.to_string()))
    }
}

/// Flips one byte in the middle of the encoded payload.
pub fn corrupt_frame(frame: &mut [u8]) {
    let i = frame.len() / 2;
    frame[i] ^= 0x5a;
}

/// Passes one chunk through an edge with faults: `None` when it is lost.
/// Corrupted chunks travel through the codec and are lost when the receiver
/// rejects the frame.
pub fn transmit(faults: &EdgeFaults, chunk: DataChunk) -> Option<DataChunk> {
    match faults.action(chunk.number) {
        EdgeAction::Deliver => Some(chunk),
        EdgeAction::Drop => None,
        EdgeAction::Corrupt => {
            let mut frame = encode(&chunk);
            corrupt_frame(&mut frame);
            decode(&frame).ok()
        }
    }
}

/// Applies an edge's faults to a chunk stream. Survivors keep their order.
pub fn apply_faults<I>(schedule: &FaultSchedule, edge: &EdgeId, stream: I) -> impl Iterator<Item = DataChunk>
where
    I: IntoIterator<Item = DataChunk>,
{
    let faults = schedule.for_edge(edge);
    stream.into_iter().filter_map(move |c| transmit(&faults, c))
}
