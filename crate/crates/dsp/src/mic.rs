//! Microphone input. Only the scripted synthetic mode is available; it plays
//! a tone in noise on a global sample clock and simulates buffer overflows.

use std::collections::BTreeSet;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use tfstream_core::{
    parse_params, Continuity, Params, Payload, ProcessError, Source, SourceChunk, SourceOptions,
};

use crate::error::DspError;
use crate::signal::tone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicMode {
    #[default]
    Synthetic,
    Device,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MicParams {
    #[serde(default)]
    mode: MicMode,
    #[serde(default = "default_rate")]
    sample_rate: f64,
    #[serde(default = "default_chunk")]
    chunk_size: usize,
    /// Number of chunks acquired before the stream ends.
    #[serde(default = "default_chunks")]
    chunks: u64,
    #[serde(default = "default_freq")]
    tone_freq: f64,
    #[serde(default = "default_amp")]
    tone_amp: f64,
    #[serde(default = "default_noise")]
    noise_std: f64,
    #[serde(default = "default_feature")]
    feature: String,
}

fn default_rate() -> f64 {
    16000.0
}
fn default_chunk() -> usize {
    4096
}
fn default_chunks() -> u64 {
    8
}
fn default_freq() -> f64 {
    1000.0
}
fn default_amp() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    0.05
}
fn default_feature() -> String {
    "snd".into()
}

/// Source kind `mic_input`.
///
/// Chunk `n` always holds samples `[n * chunk_size, (n + 1) * chunk_size)`
/// of the global clock. A chunk acquired during an overflow is flagged
/// invalid and kept here; the next good chunk is published as
/// `discontinuous`. The first chunk is `discontinuous` too and the final one
/// is `last` unless it follows an overflow.
#[derive(Debug)]
pub struct MicInput {
    feature: String,
    sample_rate: f64,
    chunk_size: usize,
    chunks: u64,
    tone_freq: f64,
    tone_amp: f64,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    overflow_at: BTreeSet<u64>,
    next: u64,
    broken: bool,
    withheld: Vec<u64>,
}

impl MicInput {
    pub const KIND: &'static str = "mic_input";

    pub fn from_params(
        params: &Params,
        options: &SourceOptions,
    ) -> Result<Box<dyn Source>, ProcessError> {
        let p: MicParams = parse_params(Self::KIND, params)?;
        if p.mode == MicMode::Device {
            return Err(ProcessError::kernel(
                Self::KIND,
                DspError::Device("no audio device backend in this build".into()),
            ));
        }
        if p.chunk_size == 0 || !(p.sample_rate > 0.0) || !(p.noise_std >= 0.0) {
            return Err(ProcessError::Params {
                kind: Self::KIND.into(),
                message: "chunk_size, sample_rate must be positive and noise_std >= 0".into(),
            });
        }
        Ok(Box::new(Self {
            feature: p.feature,
            sample_rate: p.sample_rate,
            chunk_size: p.chunk_size,
            chunks: p.chunks,
            tone_freq: p.tone_freq,
            tone_amp: p.tone_amp,
            noise: Normal::new(0.0, p.noise_std).expect("checked"),
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            overflow_at: options.overflow_at.clone(),
            next: 0,
            broken: true,
            withheld: Vec::new(),
        }))
    }

    fn acquire(&mut self, number: u64) -> Vec<f32> {
        let offset = number * self.chunk_size as u64;
        let mut x = tone(self.chunk_size, offset, self.tone_freq, self.sample_rate, self.tone_amp);
        for v in &mut x {
            *v += self.noise.sample(&mut self.rng) as f32;
        }
        x
    }
}

impl Source for MicInput {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn feature(&self) -> &str {
        &self.feature
    }

    fn chunk_len(&self) -> usize {
        self.chunk_size
    }

    fn next_chunk(&mut self) -> Result<Option<SourceChunk>, ProcessError> {
        loop {
            if self.next >= self.chunks {
                return Ok(None);
            }
            let number = self.next;
            self.next += 1;
            let samples = self.acquire(number);
            if self.overflow_at.contains(&number) {
                self.withheld.push(number);
                self.broken = true;
                continue;
            }
            let continuity = if self.broken {
                Continuity::Discontinuous
            } else if number + 1 == self.chunks {
                Continuity::Last
            } else {
                Continuity::WithPrevious
            };
            self.broken = false;
            return Ok(Some(SourceChunk {
                number,
                payload: Payload::Series(Array1::from(samples)),
                sample_rate: self.sample_rate,
                continuity,
            }));
        }
    }

    fn withheld(&self) -> Vec<u64> {
        self.withheld.clone()
    }
}
