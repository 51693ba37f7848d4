//! WAV file input.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::Deserialize;
use tfstream_core::{
    parse_params, Continuity, Params, Payload, ProcessError, Source, SourceChunk, SourceOptions,
};

use crate::error::DspError;
use crate::signal::white_noise;

/// Decoded mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Wav {
    pub samples: Vec<f32>,
    pub sample_rate: f64,
}

/// Reads 16-bit PCM or 32-bit float WAV, keeping the first channel.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Wav, DspError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let all: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    Ok(Wav {
        samples: all.into_iter().step_by(channels.max(1)).collect(),
        sample_rate: spec.sample_rate as f64,
    })
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav_f32(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes a mono 16-bit PCM WAV, clipping to full scale.
pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Splits `n` samples into chunk ranges of `size`; a short remainder is
/// appended to the final chunk.
pub fn chunk_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let full = n / size;
    if full == 0 {
        return if n == 0 { Vec::new() } else { vec![0..n] };
    }
    (0..full)
        .map(|i| {
            let end = if i + 1 == full { n } else { (i + 1) * size };
            i * size..end
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WavParams {
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default = "default_chunk")]
    chunk_size: usize,
    /// Length in samples of a leading white-noise calibration chunk.
    #[serde(default)]
    calibration_samples: Option<usize>,
    #[serde(default = "default_cal_std")]
    calibration_std: f64,
    #[serde(default = "default_feature")]
    feature: String,
}

fn default_chunk() -> usize {
    4096
}
fn default_cal_std() -> f64 {
    0.1
}
fn default_feature() -> String {
    "snd".into()
}

#[derive(Debug)]
enum Input {
    Pending(Option<PathBuf>),
    Loaded(Wav, Vec<std::ops::Range<usize>>),
}

/// Source kind `wav_reader`.
///
/// The file is read on the first call to `next_chunk`. Chunks are numbered
/// from 0, or from 1 when a calibration chunk takes number 0. Flags:
/// `newfile` first, `last` final, `withprevious` between.
#[derive(Debug)]
pub struct WavReader {
    feature: String,
    chunk_size: usize,
    input: Input,
    calibration: Option<(usize, f64, u64)>,
    next: usize,
}

impl WavReader {
    pub const KIND: &'static str = "wav_reader";

    pub fn from_params(
        params: &Params,
        options: &SourceOptions,
    ) -> Result<Box<dyn Source>, ProcessError> {
        let p: WavParams = parse_params(Self::KIND, params)?;
        if p.chunk_size == 0 || p.calibration_samples == Some(0) {
            return Err(ProcessError::Params {
                kind: Self::KIND.into(),
                message: "chunk_size and calibration_samples must be positive".into(),
            });
        }
        Ok(Box::new(Self {
            feature: p.feature,
            chunk_size: p.chunk_size,
            input: Input::Pending(options.input_path.clone().or(p.path)),
            calibration: p.calibration_samples.map(|n| (n, p.calibration_std, options.seed)),
            next: 0,
        }))
    }

    /// Reader over an already decoded signal. The calibration chunk, if
    /// any, is `(length, noise std, seed)`.
    pub fn new(
        wav: Wav,
        chunk_size: usize,
        calibration: Option<(usize, f64, u64)>,
        feature: String,
    ) -> Self {
        let ranges = chunk_ranges(wav.samples.len(), chunk_size);
        Self {
            feature,
            chunk_size,
            input: Input::Loaded(wav, ranges),
            calibration,
            next: 0,
        }
    }

    fn load(&mut self) -> Result<(&Wav, &[std::ops::Range<usize>]), ProcessError> {
        if let Input::Pending(path) = &self.input {
            let path = path.as_ref().ok_or_else(|| ProcessError::Params {
                kind: Self::KIND.into(),
                message: "no input path given".into(),
            })?;
            let wav = read_wav(path).map_err(|e| ProcessError::kernel(Self::KIND, e))?;
            let ranges = chunk_ranges(wav.samples.len(), self.chunk_size);
            self.input = Input::Loaded(wav, ranges);
        }
        match &self.input {
            Input::Loaded(w, r) => Ok((w, r)),
            Input::Pending(_) => unreachable!("loaded above"),
        }
    }
}

impl Source for WavReader {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn feature(&self) -> &str {
        &self.feature
    }

    fn calibration_len(&self) -> Option<usize> {
        self.calibration.map(|c| c.0)
    }

    fn chunk_len(&self) -> usize {
        self.chunk_size
    }

    fn next_chunk(&mut self) -> Result<Option<SourceChunk>, ProcessError> {
        let calibration = self.calibration;
        let offset = calibration.is_some() as usize;
        let i = self.next;
        let (wav, ranges) = self.load()?;
        let sample_rate = wav.sample_rate;
        let chunk = if let (Some((len, std, seed)), 0) = (calibration, i) {
            Some(SourceChunk {
                number: 0,
                payload: Payload::Series(Array1::from(white_noise(len, std, seed))),
                sample_rate,
                continuity: Continuity::CalibrationChunk,
            })
        } else {
            let k = i - offset;
            ranges.get(k).cloned().map(|range| SourceChunk {
                number: i as u64,
                payload: Payload::Series(Array1::from(wav.samples[range].to_vec())),
                sample_rate,
                continuity: if k == 0 {
                    Continuity::NewFile
                } else if k + 1 == ranges.len() {
                    Continuity::Last
                } else {
                    Continuity::WithPrevious
                },
            })
        };
        if chunk.is_some() {
            self.next += 1;
        }
        Ok(chunk)
    }
}
