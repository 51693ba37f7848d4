//! Processor and source traits and the registry that maps kind names to
//! factories.
//!
//! Every node of a pipeline is built from a kind name and a parameter map.
//! Input nodes implement [`Source`] and assign chunk numbers; every other
//! node implements [`Processor`] and sees only merged, aligned input.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::chunk::{AlignmentParams, Continuity, Payload};
use crate::merge::MergedChunk;

/// Kind-specific parameters as given in the pipeline configuration.
pub type Params = serde_json::Map<String, serde_json::Value>;

/// Deserializes a typed parameter struct from a parameter map.
pub fn parse_params<T: DeserializeOwned>(kind: &str, params: &Params) -> Result<T, ProcessError> {
    serde_json::from_value(serde_json::Value::Object(params.clone())).map_err(|e| {
        ProcessError::Params {
            kind: kind.to_string(),
            message: e.to_string(),
        }
    })
}

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("invalid parameters for {kind}: {message}")]
    Params { kind: String, message: String },
    #[error("unknown processor kind `{0}`")]
    UnknownKind(String),
    #[error("{kind}: {source}")]
    Kernel {
        kind: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl ProcessError {
    pub fn kernel(kind: &str, err: impl std::error::Error + Send + Sync + 'static) -> Self {
        ProcessError::Kernel {
            kind: kind.to_string(),
            source: Box::new(err),
        }
    }
}

/// A feature a processor publishes, with its relative alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub alignment: AlignmentParams,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, alignment: AlignmentParams) -> Self {
        Self {
            name: name.into(),
            alignment,
        }
    }
}

/// One published representation produced by a processing step.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub feature: String,
    pub payload: Payload,
    pub sample_rate: f64,
    pub channel_freqs: Option<Vec<f64>>,
}

/// Parameters a processor estimated from a calibration chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub threshold: f64,
    pub slope: f64,
}

/// Static facts about a node used when validating a graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeTraits {
    /// Output time axis = input time axis / `rate_divisor`.
    pub rate_divisor: u32,
    /// The node cannot run without a calibration chunk upstream.
    pub needs_calibration: bool,
    /// Features the node expects among its inputs, by feature name.
    pub required_inputs: BTreeSet<String>,
}

/// A processing node.
///
/// `process` receives the merged chunk restricted to its valid time region
/// (all scale rows included) and returns the representations to publish.
/// The runtime numbers and flags the outputs and composes their alignment.
/// A processor must honour its declared alignment: on a discontinuous input
/// it resets its state and emits `len - d - p` columns; on a continuous one
/// it emits exactly `len` columns, shifted `p` steps into the past.
pub trait Processor: Send {
    fn kind(&self) -> &'static str;

    fn features(&self) -> Vec<FeatureSpec>;

    fn traits(&self) -> NodeTraits {
        NodeTraits {
            rate_divisor: 1,
            ..NodeTraits::default()
        }
    }

    fn process(&mut self, input: &MergedChunk) -> Result<Vec<Output>, ProcessError>;

    fn calibration(&self) -> Option<Calibration> {
        None
    }

    /// Kind-specific run statistics for the run report.
    fn report(&self) -> Option<serde_json::Value> {
        None
    }
}

/// A chunk produced by an input node.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceChunk {
    pub number: u64,
    pub payload: Payload,
    pub sample_rate: f64,
    pub continuity: Continuity,
}

/// Options the runtime hands to input nodes.
#[derive(Debug, Clone, Default)]
pub struct SourceOptions {
    /// Seed for anything random the source synthesizes.
    pub seed: u64,
    /// Chunk numbers at which acquisition overflows.
    pub overflow_at: BTreeSet<u64>,
    /// Overrides the input path, when the source reads one.
    pub input_path: Option<std::path::PathBuf>,
}

/// An input node: reads or synthesizes chunks and numbers them.
pub trait Source: Send {
    fn kind(&self) -> &'static str;

    /// Name of the single feature the source publishes.
    fn feature(&self) -> &str;

    /// Length of the leading calibration chunk, if the source emits one.
    fn calibration_len(&self) -> Option<usize> {
        None
    }

    /// Whether the first chunk will be a calibration chunk.
    fn emits_calibration(&self) -> bool {
        self.calibration_len().is_some()
    }

    /// Nominal chunk length in samples.
    fn chunk_len(&self) -> usize;

    /// Next chunk, or `None` at end of stream.
    fn next_chunk(&mut self) -> Result<Option<SourceChunk>, ProcessError>;

    /// Chunks produced but withheld (overflowed), by number.
    fn withheld(&self) -> Vec<u64> {
        Vec::new()
    }
}

pub type ProcessorFactory = fn(&Params) -> Result<Box<dyn Processor>, ProcessError>;
pub type SourceFactory = fn(&Params, &SourceOptions) -> Result<Box<dyn Source>, ProcessError>;

#[derive(Clone, Copy)]
pub enum Factory {
    Processor(ProcessorFactory),
    Source(SourceFactory),
}

impl fmt::Debug for Factory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factory::Processor(_) => f.write_str("Factory::Processor"),
            Factory::Source(_) => f.write_str("Factory::Source"),
        }
    }
}

/// Kind name → factory.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_processor(&mut self, kind: &str, factory: ProcessorFactory) -> &mut Self {
        self.entries.insert(kind.to_string(), Factory::Processor(factory));
        self
    }

    pub fn register_source(&mut self, kind: &str, factory: SourceFactory) -> &mut Self {
        self.entries.insert(kind.to_string(), Factory::Source(factory));
        self
    }

    pub fn get(&self, kind: &str) -> Option<Factory> {
        self.entries.get(kind).copied()
    }

    pub fn is_source(&self, kind: &str) -> bool {
        matches!(self.get(kind), Some(Factory::Source(_)))
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build_processor(
        &self,
        kind: &str,
        params: &Params,
    ) -> Result<Box<dyn Processor>, ProcessError> {
        match self.get(kind) {
            Some(Factory::Processor(f)) => f(params),
            _ => Err(ProcessError::UnknownKind(kind.to_string())),
        }
    }

    pub fn build_source(
        &self,
        kind: &str,
        params: &Params,
        options: &SourceOptions,
    ) -> Result<Box<dyn Source>, ProcessError> {
        match self.get(kind) {
            Some(Factory::Source(f)) => f(params, options),
            _ => Err(ProcessError::UnknownKind(kind.to_string())),
        }
    }
}
