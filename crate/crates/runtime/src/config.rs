//! Pipeline configuration file (TOML).
//!
//! ```toml
//! seed = 7                    # optional, default 0
//!
//! [runtime]
//! queue_depth = 16            # chunks per inbox
//! watchdog_ms = 2000          # optional; abandon sets incomplete this long
//!
//! [[processors]]
//! name = "wav"
//! kind = "wav_reader"
//! params = { chunk_size = 4096, calibration_samples = 32000 }
//!
//! [[processors]]
//! name = "fb"
//! kind = "gammachirp_filterbank"
//! params = { sample_rate = 8000.0, channels = 64 }
//! # optional: assert a feature's relative alignment
//! alignment = { E = { dropped_after_discontinuity = 800 } }
//!
//! [[edges]]
//! from = "wav.snd"
//! to = "fb"
//! transport = "local"         # or "tcp"
//! address = "127.0.0.1:0"     # tcp only
//!
//! [output]
//! taps = ["fb.E"]             # keys written as .tf files
//! csv = "ptn.E_T"             # optional block-averaged CSV export
//! block = [100, 8]            # (time steps, channels)
//!
//! [[faults]]
//! type = "drop_chunk"
//! edge = "se.T -> ptn"
//! number = 2
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tfstream_core::{AlignmentParams, Params};
use tfstream_wire::FaultSchedule;

use crate::error::RuntimeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorSpec {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub params: Params,
    /// Expected relative alignment per feature; checked against the kind.
    #[serde(default)]
    pub alignment: BTreeMap<String, AlignmentParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Local,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    /// `producer.feature`
    pub from: String,
    /// Consumer node name.
    pub to: String,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default)]
    pub address: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub taps: Vec<String>,
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default = "default_block")]
    pub block: (usize, usize),
}

fn default_block() -> (usize, usize) {
    (100, 8)
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            taps: Vec::new(),
            csv: None,
            block: default_block(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeOptions {
    #[serde(default = "default_depth")]
    pub queue_depth: usize,
    #[serde(default)]
    pub watchdog_ms: Option<u64>,
}

fn default_depth() -> usize {
    16
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            queue_depth: default_depth(),
            watchdog_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub runtime: RuntimeOptions,
    pub processors: Vec<ProcessorSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub faults: FaultSchedule,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, RuntimeError> {
        toml::from_str(text).map_err(|e| RuntimeError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RuntimeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuntimeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn processor(&self, name: &str) -> Option<&ProcessorSpec> {
        self.processors.iter().find(|p| p.name == name)
    }

    pub fn processor_mut(&mut self, name: &str) -> Option<&mut ProcessorSpec> {
        self.processors.iter_mut().find(|p| p.name == name)
    }
}
