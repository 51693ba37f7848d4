use thiserror::Error;
use tfstream_core::{AlignmentError, AlignmentParams, BufferError, ChunkError, MergeError, ProcessError};
use tfstream_wire::{FaultError, WireError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("processor `{name}` has unknown kind `{kind}`")]
    UnknownProcessorKind { name: String, kind: String },
    #[error("processor name `{0}` is used twice")]
    DuplicateName(String),
    #[error("edge `{edge}` names unknown processor `{name}`")]
    UnknownNode { edge: String, name: String },
    #[error("bad edge `{0}`: {1}")]
    BadEdge(String, String),
    #[error("processor `{producer}` does not publish feature `{feature}`")]
    UnknownFeature { producer: String, feature: String },
    #[error("the processor graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("the graph has no input node")]
    NoSource,
    #[error("the graph has {0} input nodes; fusing independent sources is not supported")]
    MultipleSources(usize),
    #[error("processor `{0}` has no inputs")]
    NoInputs(String),
    #[error("processor `{processor}` needs input features {missing:?}")]
    MissingInputs { processor: String, missing: Vec<String> },
    #[error("inputs of `{0}` run at different rates")]
    RateMismatch(String),
    #[error(
        "chunk length {chunk_len} is too short for `{key}` at processor `{processor}`: \
         cumulative d + p = {extent} steps of {steps} per chunk; minimum chunk length is {required} samples"
    )]
    ChunkTooShortForDepth {
        processor: String,
        key: String,
        chunk_len: usize,
        steps: u64,
        extent: u64,
        required: usize,
    },
    #[error("`{processor}` divides the rate by {divisor}, which does not divide {what} = {value}")]
    RateDivisibility {
        processor: String,
        divisor: u32,
        what: String,
        value: u64,
    },
    #[error(
        "processor `{0}` needs calibration: configure theta and beta, or give the input a \
         calibration chunk (calibration_samples)"
    )]
    MissingCalibration(String),
    #[error("feature `{processor}.{feature}` declares alignment {declared}, configuration expects {configured}")]
    AlignmentMismatch {
        processor: String,
        feature: String,
        declared: AlignmentParams,
        configured: AlignmentParams,
    },
    #[error("output key `{0}` is not published by any processor")]
    UnknownOutput(String),
    #[error("fault schedule: {0}")]
    Fault(#[from] FaultError),
    #[error("processor `{node}`: {source}")]
    Process {
        node: String,
        #[source]
        source: ProcessError,
    },
    #[error("merge at `{node}`: {source}")]
    Merge {
        node: String,
        #[source]
        source: MergeError,
    },
    #[error("buffer at `{node}`: {source}")]
    Buffer {
        node: String,
        #[source]
        source: BufferError,
    },
    #[error("chunk published by `{node}`: {source}")]
    Chunk {
        node: String,
        #[source]
        source: ChunkError,
    },
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("network link `{edge}`: {source}")]
    Wire {
        edge: String,
        #[source]
        source: WireError,
    },
    #[error("`{0}` stopped because a downstream worker failed")]
    Downstream(String),
    #[error("worker `{0}` panicked")]
    Panic(String),
    #[error("TF file: {0}")]
    TfFile(String),
    #[error("oracle: {0}")]
    Oracle(String),
}

impl From<std::io::Error> for RuntimeError {
    fn from(e: std::io::Error) -> Self {
        RuntimeError::Io(e.to_string())
    }
}
