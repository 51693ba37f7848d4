use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("frame version {found}, this build reads version {supported}")]
    Version { found: u16, supported: u16 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    TooLarge { len: usize, max: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        WireError::Io(e.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("cannot parse edge `{0}`, expected `producer.feature -> consumer`")]
    BadEdge(String),
    #[error("fault names edge `{0}`, which is not in the graph")]
    UnknownEdge(String),
    #[error("fault names input `{0}`, which is not an input node")]
    UnknownInput(String),
    #[error("link_down range {from}..={to} is empty")]
    EmptyRange { from: u64, to: u64 },
}
