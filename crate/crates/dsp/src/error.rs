use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("sample rate {rate} Hz is not divisible by decimation factor {factor}")]
    NonIntegerRate { rate: f64, factor: u32 },
    #[error("filterbank built for {expected} Hz input, got {found} Hz")]
    SpecMismatch { expected: f64, found: f64 },
    #[error("{channels} channels, need at least {required}")]
    TooFewChannels { channels: usize, required: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected a chunk flagged calibrationChunk")]
    NotACalibrationChunk,
    #[error("no threshold/slope configured and no calibration chunk seen yet")]
    NotCalibrated,
    #[error("device error: {0}")]
    Device(String),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

impl From<hound::Error> for DspError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => DspError::Io(io.to_string()),
            hound::Error::Unsupported => DspError::UnsupportedFormat("unsupported WAV encoding".into()),
            other => DspError::UnsupportedFormat(other.to_string()),
        }
    }
}

impl From<std::io::Error> for DspError {
    fn from(e: std::io::Error) -> Self {
        DspError::Io(e.to_string())
    }
}
