//! Core data model and alignment machinery for streaming time-frequency
//! pipelines.
//!
//! Chunks from several processing paths reach a consumer at different times
//! and with different valid regions. This crate keeps them aligned:
//!
//! - [`chunk`]: chunks, alignment counters and continuity flags;
//! - [`alignment`]: composition and merge rules for the counters;
//! - [`merge`]: continuity decisions and the three slicing rules;
//! - [`composite`]: per-consumer buffering, gap inference, fast-forward;
//! - [`processor`]: the node traits and the kind registry.

pub mod alignment;
pub mod chunk;
pub mod composite;
pub mod merge;
pub mod processor;

pub use alignment::{compose, drop_counts, merge_params, AlignmentError, DropCounts};
pub use chunk::{
    is_discontinuous_subtype, validate_chunk, AlignmentParams, ChunkError, Continuity, DataChunk,
    Payload, SourceKey, MAX_COUNTER,
};
pub use composite::{BufferCounters, BufferError, CompletedSet, InFlightBuffer};
pub use merge::{
    classify_scenario, decide_continuity, merge_array, refine_continuity, MergeError,
    MergeScenario, MergeState, MergedChunk, MergedInput,
};
pub use processor::{
    parse_params, Calibration, FeatureSpec, NodeTraits, Output, Params, ProcessError, Processor,
    Registry, Source, SourceChunk, SourceOptions,
};
