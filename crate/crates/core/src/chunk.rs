//! Chunks and the metadata that travels with them.
//!
//! A [`DataChunk`] is one numbered segment of a time series or of a
//! time-frequency representation. Besides the payload it carries two kinds
//! of metadata that make re-alignment possible downstream:
//!
//! * [`AlignmentParams`], four counters in cumulative form describing how far
//!   the valid region has been shifted and trimmed relative to the original
//!   input timeline, and which scale rows are invalid;
//! * a [`Continuity`] flag declaring how the chunk relates to its predecessor.

use std::fmt;
use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest value any alignment counter may take.
pub const MAX_COUNTER: u32 = i32::MAX as u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChunkError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error(
        "chunk {number} of {key} is too short: {time_len} time steps but \
         dropped_after_discontinuity + included_past = {required}"
    )]
    TooShort {
        key: SourceKey,
        number: u64,
        time_len: usize,
        required: u64,
    },
}

/// Alignment counters attached to a chunk (cumulative form) or to a feature
/// of a processor (relative form).
///
/// Time counters are in time steps of the representation they describe;
/// scale counters are in channels. Invalid large-scale rows sit at the
/// low-frequency edge (channel index 0 upward), invalid small-scale rows at
/// the high-frequency edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentParams {
    /// Time steps from the future used to compute a value (`p`).
    pub included_past: u32,
    /// Time steps from the past used to compute a value (`d`).
    pub dropped_after_discontinuity: u32,
    /// Invalid channels at the large-scale (low-frequency) edge (`l`).
    pub invalid_large_scales: u32,
    /// Invalid channels at the small-scale (high-frequency) edge (`s`).
    pub invalid_small_scales: u32,
}

impl AlignmentParams {
    pub const ZERO: Self = Self::new(0, 0, 0, 0);

    pub const fn new(p: u32, d: u32, l: u32, s: u32) -> Self {
        Self {
            included_past: p,
            dropped_after_discontinuity: d,
            invalid_large_scales: l,
            invalid_small_scales: s,
        }
    }

    /// Causal plus non-causal time extent, `d + p`.
    pub fn time_extent(&self) -> u64 {
        self.dropped_after_discontinuity as u64 + self.included_past as u64
    }

    /// Total number of invalid scale rows, `l + s`.
    pub fn invalid_rows(&self) -> u64 {
        self.invalid_large_scales as u64 + self.invalid_small_scales as u64
    }

    pub fn as_array(&self) -> [u32; 4] {
        [
            self.included_past,
            self.dropped_after_discontinuity,
            self.invalid_large_scales,
            self.invalid_small_scales,
        ]
    }

    pub fn from_array(v: [u32; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// True when every counter is within [`MAX_COUNTER`].
    pub fn in_range(&self) -> bool {
        self.as_array().iter().all(|&c| c <= MAX_COUNTER)
    }
}

impl fmt::Display for AlignmentParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(p={}, d={}, l={}, s={})",
            self.included_past,
            self.dropped_after_discontinuity,
            self.invalid_large_scales,
            self.invalid_small_scales
        )
    }
}

/// Continuity flag of a chunk. The numeric codes are part of the wire and
/// file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuity {
    /// Continuity with neighbours unknown; never published.
    Invalid,
    Discontinuous,
    NewFile,
    CalibrationChunk,
    WithPrevious,
    Last,
}

impl Continuity {
    pub const ALL: [Continuity; 6] = [
        Continuity::Invalid,
        Continuity::Discontinuous,
        Continuity::NewFile,
        Continuity::CalibrationChunk,
        Continuity::WithPrevious,
        Continuity::Last,
    ];

    pub const fn code(self) -> i8 {
        match self {
            Continuity::Invalid => -1,
            Continuity::Discontinuous => 0,
            Continuity::NewFile => 1,
            Continuity::CalibrationChunk => 2,
            Continuity::WithPrevious => 10,
            Continuity::Last => 11,
        }
    }

    pub fn from_code(code: i64) -> Result<Self, ChunkError> {
        Ok(match code {
            -1 => Continuity::Invalid,
            0 => Continuity::Discontinuous,
            1 => Continuity::NewFile,
            2 => Continuity::CalibrationChunk,
            10 => Continuity::WithPrevious,
            11 => Continuity::Last,
            other => {
                return Err(ChunkError::Metadata(format!(
                    "unknown continuity code {other}"
                )))
            }
        })
    }

    pub const fn is_discontinuous_subtype(self) -> bool {
        matches!(
            self,
            Continuity::Discontinuous | Continuity::NewFile | Continuity::CalibrationChunk
        )
    }

    pub const fn is_withprevious_subtype(self) -> bool {
        matches!(self, Continuity::WithPrevious | Continuity::Last)
    }

    pub const fn is_invalid(self) -> bool {
        matches!(self, Continuity::Invalid)
    }
}

impl fmt::Display for Continuity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Continuity::Invalid => "invalid",
            Continuity::Discontinuous => "discontinuous",
            Continuity::NewFile => "newfile",
            Continuity::CalibrationChunk => "calibrationChunk",
            Continuity::WithPrevious => "withprevious",
            Continuity::Last => "last",
        };
        f.write_str(name)
    }
}

/// Free-function form of [`Continuity::is_discontinuous_subtype`].
pub fn is_discontinuous_subtype(c: Continuity) -> bool {
    c.is_discontinuous_subtype()
}

/// Identifies a published representation: which processor produced it and
/// under which feature name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceKey {
    pub producer: String,
    pub feature: String,
}

impl SourceKey {
    pub fn new(producer: impl Into<String>, feature: impl Into<String>) -> Self {
        Self {
            producer: producer.into(),
            feature: feature.into(),
        }
    }

    /// Parses `producer.feature`. The producer name may not contain a dot.
    pub fn parse(s: &str) -> Option<Self> {
        let (producer, feature) = s.split_once('.')?;
        if producer.is_empty() || feature.is_empty() {
            return None;
        }
        Some(Self::new(producer, feature))
    }
}

impl fmt::Display for SourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.producer, self.feature)
    }
}

/// Chunk payload: a plain time series or a channels × time grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Series(Array1<f32>),
    Grid(Array2<f32>),
}

impl Payload {
    pub fn time_len(&self) -> usize {
        match self {
            Payload::Series(a) => a.len(),
            Payload::Grid(a) => a.ncols(),
        }
    }

    /// Channel count, `None` for a time series.
    pub fn channels(&self) -> Option<usize> {
        match self {
            Payload::Series(_) => None,
            Payload::Grid(a) => Some(a.nrows()),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Payload::Series(a) => vec![a.len()],
            Payload::Grid(a) => vec![a.nrows(), a.ncols()],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Series(a) => a.len(),
            Payload::Grid(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies out the given time columns.
    ///
    /// Panics if the range is out of bounds.
    pub fn slice_time(&self, range: Range<usize>) -> Payload {
        match self {
            Payload::Series(a) => Payload::Series(a.slice(s![range]).to_owned()),
            Payload::Grid(a) => Payload::Grid(a.slice(s![.., range]).to_owned()),
        }
    }

    /// Concatenates along the time axis. `None` if the kinds or channel
    /// counts differ.
    pub fn concat_time(&self, other: &Payload) -> Option<Payload> {
        match (self, other) {
            (Payload::Series(a), Payload::Series(b)) => {
                concatenate(Axis(0), &[a.view(), b.view()]).ok().map(Payload::Series)
            }
            (Payload::Grid(a), Payload::Grid(b)) if a.nrows() == b.nrows() => {
                concatenate(Axis(1), &[a.view(), b.view()]).ok().map(Payload::Grid)
            }
            _ => None,
        }
    }

    pub fn values(&self) -> Box<dyn Iterator<Item = f32> + '_> {
        match self {
            Payload::Series(a) => Box::new(a.iter().copied()),
            Payload::Grid(a) => Box::new(a.iter().copied()),
        }
    }

    pub fn as_series(&self) -> Option<&Array1<f32>> {
        match self {
            Payload::Series(a) => Some(a),
            Payload::Grid(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&Array2<f32>> {
        match self {
            Payload::Grid(a) => Some(a),
            Payload::Series(_) => None,
        }
    }
}

/// A numbered, flagged, alignment-annotated segment of a representation.
///
/// Numbers are assigned by input processors and preserved by every
/// downstream processor, so chunks with the same number on different paths
/// describe the same input time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DataChunk {
    pub number: u64,
    pub key: SourceKey,
    pub payload: Payload,
    /// Rate of the time axis in Hz.
    pub sample_rate: f64,
    /// Per-channel centre frequencies, ascending.
    pub channel_freqs: Option<Vec<f64>>,
    pub alignment: AlignmentParams,
    pub continuity: Continuity,
}

/// Checks every chunk invariant that can be verified locally and returns the
/// chunk unchanged.
///
/// Invalid chunks are rejected because this is the publish boundary check.
/// The `d + p < e` length condition applies to chunks of the withprevious
/// subtype; discontinuous chunks have already been trimmed by `d + p` and
/// only need to be non-empty.
pub fn validate_chunk(chunk: DataChunk) -> Result<DataChunk, ChunkError> {
    let time_len = chunk.payload.time_len();
    if time_len == 0 || chunk.payload.is_empty() {
        return Err(ChunkError::Shape(format!(
            "chunk {} of {} has an empty payload",
            chunk.number, chunk.key
        )));
    }
    if let Some(freqs) = &chunk.channel_freqs {
        match chunk.payload.channels() {
            Some(ch) if ch == freqs.len() => {}
            Some(ch) => {
                return Err(ChunkError::Shape(format!(
                    "{} channel frequencies for {ch} channels",
                    freqs.len()
                )))
            }
            None => {
                return Err(ChunkError::Shape(
                    "channel frequencies attached to a time series".into(),
                ))
            }
        }
        let increasing = freqs.windows(2).all(|w| w[0] < w[1]);
        let decreasing = freqs.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err(ChunkError::Shape(
                "channel frequencies are not strictly monotone".into(),
            ));
        }
    }
    if !(chunk.sample_rate.is_finite() && chunk.sample_rate > 0.0) {
        return Err(ChunkError::Metadata(format!(
            "sample rate {} is not positive",
            chunk.sample_rate
        )));
    }
    if chunk.continuity.is_invalid() {
        return Err(ChunkError::Metadata(format!(
            "chunk {} of {} is flagged invalid and may not be published",
            chunk.number, chunk.key
        )));
    }
    if !chunk.alignment.in_range() {
        return Err(ChunkError::Metadata(format!(
            "alignment counters {} exceed {MAX_COUNTER}",
            chunk.alignment
        )));
    }
    let required = chunk.alignment.time_extent();
    if chunk.continuity.is_withprevious_subtype() && required >= time_len as u64 {
        return Err(ChunkError::TooShort {
            key: chunk.key.clone(),
            number: chunk.number,
            time_len,
            required,
        });
    }
    Ok(chunk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_chunk(channels: usize, time: usize, p: u32, d: u32, c: Continuity) -> DataChunk {
        DataChunk {
            number: 3,
            key: SourceKey::new("gcfb", "E"),
            payload: Payload::Grid(Array2::zeros((channels, time))),
            sample_rate: 8000.0,
            channel_freqs: Some((0..channels).map(|i| 100.0 + 10.0 * i as f64).collect()),
            alignment: AlignmentParams::new(p, d, 0, 0),
            continuity: c,
        }
    }

    #[test]
    fn subtype_predicates_partition_codes() {
        for c in Continuity::ALL {
            assert!(!(c.is_discontinuous_subtype() && c.is_withprevious_subtype()));
            assert_eq!(c.is_discontinuous_subtype(), [0, 1, 2].contains(&c.code()));
            assert_eq!(c.is_withprevious_subtype(), [10, 11].contains(&c.code()));
            assert_eq!(Continuity::from_code(c.code() as i64).unwrap(), c);
        }
        assert!(!Continuity::Invalid.is_discontinuous_subtype());
        assert!(!Continuity::Invalid.is_withprevious_subtype());
    }

    #[test]
    fn subtype_examples() {
        assert!(is_discontinuous_subtype(Continuity::NewFile));
        assert!(!is_discontinuous_subtype(Continuity::WithPrevious));
        assert!(is_discontinuous_subtype(Continuity::CalibrationChunk));
    }

    #[test]
    fn unknown_code_is_metadata_error() {
        assert!(matches!(
            Continuity::from_code(5),
            Err(ChunkError::Metadata(_))
        ));
    }

    #[test]
    fn valid_chunk_passes() {
        let c = grid_chunk(64, 1000, 12, 40, Continuity::WithPrevious);
        assert_eq!(validate_chunk(c.clone()).unwrap(), c);
    }

    #[test]
    fn too_short_chunk() {
        let mut c = grid_chunk(4, 10, 5, 8, Continuity::WithPrevious);
        c.channel_freqs = None;
        assert!(matches!(
            validate_chunk(c),
            Err(ChunkError::TooShort { required: 13, time_len: 10, .. })
        ));
    }

    #[test]
    fn invalid_chunk_is_never_published() {
        let c = grid_chunk(4, 100, 0, 0, Continuity::Invalid);
        assert!(matches!(validate_chunk(c), Err(ChunkError::Metadata(_))));
    }

    #[test]
    fn shape_errors() {
        let mut c = grid_chunk(4, 100, 0, 0, Continuity::WithPrevious);
        c.channel_freqs = Some(vec![1.0, 2.0, 3.0]);
        assert!(matches!(validate_chunk(c), Err(ChunkError::Shape(_))));

        let mut c = grid_chunk(4, 100, 0, 0, Continuity::WithPrevious);
        c.channel_freqs = Some(vec![1.0, 3.0, 2.0, 4.0]);
        assert!(matches!(validate_chunk(c), Err(ChunkError::Shape(_))));

        let c = grid_chunk(4, 0, 0, 0, Continuity::NewFile);
        assert!(matches!(validate_chunk(c), Err(ChunkError::Shape(_))));
    }

    #[test]
    fn counters_above_cap_rejected() {
        let mut c = grid_chunk(4, 100, 0, 0, Continuity::NewFile);
        c.alignment.invalid_large_scales = MAX_COUNTER + 1;
        assert!(matches!(validate_chunk(c), Err(ChunkError::Metadata(_))));
    }

    #[test]
    fn discontinuous_chunk_only_needs_one_column() {
        let c = grid_chunk(4, 3, 50, 50, Continuity::NewFile);
        assert!(validate_chunk(c).is_ok());
    }

    #[test]
    fn validate_is_idempotent() {
        let c = grid_chunk(8, 500, 3, 7, Continuity::Last);
        let once = validate_chunk(c).unwrap();
        let twice = validate_chunk(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn payload_slice_and_concat() {
        let g = Payload::Grid(Array2::from_shape_fn((2, 6), |(r, c)| (r * 10 + c) as f32));
        let a = g.slice_time(0..2);
        let b = g.slice_time(2..6);
        assert_eq!(a.concat_time(&b).unwrap(), g);
        let series = Payload::Series(Array1::from(vec![1.0, 2.0]));
        assert!(series.concat_time(&g).is_none());
    }

    #[test]
    fn source_key_parse() {
        assert_eq!(SourceKey::parse("se.T_h"), Some(SourceKey::new("se", "T_h")));
        assert_eq!(SourceKey::parse("nodot"), None);
    }
}
