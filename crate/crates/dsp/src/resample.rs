//! Anti-aliased integer decimation that streams across chunk boundaries.

use std::f64::consts::PI;

use ndarray::Array1;
use serde::Deserialize;
use tfstream_core::{
    parse_params, AlignmentParams, FeatureSpec, MergedChunk, NodeTraits, Output, Params,
    Payload, ProcessError, Processor,
};

use crate::error::DspError;
use crate::single_input;

/// Windowed-sinc (Blackman) low-pass for decimation by `factor`, unit DC
/// gain. `cutoff` is the pass band edge as a fraction of the output Nyquist
/// frequency.
pub fn design_lowpass(fir_length: usize, factor: u32, cutoff: f64) -> Vec<f64> {
    if fir_length == 1 {
        return vec![1.0];
    }
    let fc = 0.5 * cutoff / factor as f64;
    let m = (fir_length - 1) as f64;
    let mut taps: Vec<f64> = (0..fir_length)
        .map(|j| {
            let x = j as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * j as f64 / m).cos()
                + 0.08 * (4.0 * PI * j as f64 / m).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// FIR filter plus decimation with state carried between calls.
///
/// Output `k` of a continuous segment is `sum_j taps[j] * x[k*factor - j]`,
/// where `x` is indexed from the start of the segment.
#[derive(Debug, Clone)]
pub struct Decimator {
    taps: Vec<f64>,
    factor: usize,
    history: Vec<f64>,
    consumed: u64,
    first_valid: u64,
}

impl Decimator {
    pub fn new(taps: Vec<f64>, factor: u32) -> Self {
        assert!(!taps.is_empty() && factor >= 1);
        Self {
            taps,
            factor: factor as usize,
            history: Vec::new(),
            consumed: 0,
            first_valid: 0,
        }
    }

    /// Outputs dropped after a discontinuity: `ceil((len - 1) / factor)`.
    pub fn warmup(&self) -> usize {
        (self.taps.len() - 1).div_ceil(self.factor)
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.consumed = 0;
    }

    /// Filters one chunk. With `restart` the state is cleared first and the
    /// first [`warmup`](Self::warmup) outputs, which would depend on samples
    /// before the restart, are not produced.
    pub fn process(&mut self, input: &[f32], restart: bool) -> Vec<f64> {
        if restart {
            self.reset();
            self.first_valid = self.warmup() as u64;
        }
        let hist = self.history.len();
        let mut ext = Vec::with_capacity(hist + input.len());
        ext.extend_from_slice(&self.history);
        ext.extend(input.iter().map(|&v| v as f64));

        let a = self.consumed;
        let b = a + input.len() as u64;
        let r = self.factor as u64;
        let mut k = a.div_ceil(r).max(self.first_valid);
        let mut out = Vec::with_capacity(((b - a) / r + 1) as usize);
        while k * r < b {
            // Position of sample k*r inside `ext`.
            let pos = (k * r - a) as usize + hist;
            let mut acc = 0.0;
            for (j, &t) in self.taps.iter().enumerate() {
                if j > pos {
                    break;
                }
                acc += t * ext[pos - j];
            }
            out.push(acc);
            k += 1;
        }

        let keep = self.taps.len() - 1;
        let start = ext.len().saturating_sub(keep);
        self.history = ext[start..].to_vec();
        self.consumed = b;
        out
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResamplerParams {
    #[serde(default = "one")]
    factor: u32,
    fir_length: Option<usize>,
    #[serde(default = "default_cutoff")]
    cutoff: f64,
    #[serde(default = "default_feature")]
    feature: String,
}

fn one() -> u32 {
    1
}

fn default_cutoff() -> f64 {
    0.9
}

fn default_feature() -> String {
    "snd".into()
}

/// Processor kind `resampler`.
#[derive(Debug, Clone)]
pub struct Resampler {
    factor: u32,
    decimator: Decimator,
    feature: String,
}

impl Resampler {
    pub const KIND: &'static str = "resampler";

    pub fn new(factor: u32, fir_length: usize, cutoff: f64) -> Result<Self, DspError> {
        if factor == 0 {
            return Err(DspError::InvalidSpec("decimation factor must be >= 1".into()));
        }
        if fir_length % 2 == 0 {
            return Err(DspError::InvalidSpec(format!(
                "FIR length {fir_length} must be odd"
            )));
        }
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(DspError::InvalidSpec(format!("cutoff {cutoff} outside (0, 1]")));
        }
        Ok(Self {
            factor,
            decimator: Decimator::new(design_lowpass(fir_length, factor, cutoff), factor),
            feature: default_feature(),
        })
    }

    pub fn from_params(params: &Params) -> Result<Box<dyn Processor>, ProcessError> {
        let p: ResamplerParams = parse_params(Self::KIND, params)?;
        let fir_length = p
            .fir_length
            .unwrap_or(if p.factor == 1 { 1 } else { 16 * p.factor as usize + 1 });
        let mut r = Self::new(p.factor, fir_length, p.cutoff)
            .map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        r.feature = p.feature;
        Ok(Box::new(r))
    }

    pub fn alignment(&self) -> AlignmentParams {
        AlignmentParams::new(0, self.decimator.warmup() as u32, 0, 0)
    }

    /// Streams one 1-D chunk through the decimator.
    pub fn resample(
        &mut self,
        samples: &[f32],
        sample_rate: f64,
        restart: bool,
    ) -> Result<(Vec<f32>, f64), DspError> {
        let out_rate = sample_rate / self.factor as f64;
        if out_rate.fract() != 0.0 && sample_rate.fract() == 0.0 {
            return Err(DspError::NonIntegerRate {
                rate: sample_rate,
                factor: self.factor,
            });
        }
        let y = self.decimator.process(samples, restart);
        Ok((y.into_iter().map(|v| v as f32).collect(), out_rate))
    }
}

impl Processor for Resampler {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn features(&self) -> Vec<FeatureSpec> {
        vec![FeatureSpec::new(self.feature.clone(), self.alignment())]
    }

    fn traits(&self) -> NodeTraits {
        NodeTraits {
            rate_divisor: self.factor,
            ..NodeTraits::default()
        }
    }

    fn process(&mut self, input: &MergedChunk) -> Result<Vec<Output>, ProcessError> {
        let (_, inp) = single_input(Self::KIND, input)?;
        let samples = inp.payload.as_series().ok_or_else(|| {
            ProcessError::kernel(
                Self::KIND,
                DspError::ShapeMismatch("resampler expects a time series".into()),
            )
        })?;
        let restart = input.continuity.is_discontinuous_subtype();
        let (y, rate) = self
            .resample(samples.as_slice().expect("contiguous"), inp.sample_rate, restart)
            .map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        Ok(vec![Output {
            feature: self.feature.clone(),
            payload: Payload::Series(Array1::from(y)),
            sample_rate: rate,
            channel_freqs: None,
        }])
    }
}
