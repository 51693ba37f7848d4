//! Gammachirp filterbank producing a cochleogram `E(t, f)`.
//!
//! Each channel is a complex gammachirp kernel
//! `t^(n-1) exp(-2 pi b ERB(f) t) exp(i (2 pi f t + c ln t))`, truncated to
//! the configured impulse length and normalized to unit gain at its centre
//! frequency. Channels are applied by FFT overlap-and-add; the energy is the
//! squared magnitude of the complex output. With `c = 0` this is the complex
//! gammatone.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::Deserialize;
use tfstream_core::{
    parse_params, AlignmentParams, FeatureSpec, MergedChunk, Output, Params, Payload,
    ProcessError, Processor,
};

use crate::error::DspError;
use crate::ola::OverlapAddBank;
use crate::single_input;
use crate::structure::take_feature;

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(freq: f64) -> f64 {
    24.7 * (4.37 * freq / 1000.0 + 1.0)
}

fn erb_rate(freq: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * freq).log10()
}

fn erb_rate_inv(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

/// `n` centre frequencies equally spaced on the ERB-rate scale, ascending.
pub fn erb_space(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = (erb_rate(f_min), erb_rate(f_max));
    (0..n)
        .map(|i| {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            erb_rate_inv(lo + frac * (hi - lo))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterbankSpec {
    /// Input sample rate the kernels are designed for.
    pub sample_rate: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_f_min")]
    pub f_min: f64,
    /// Defaults to 0.4 × sample rate.
    #[serde(default)]
    pub f_max: Option<f64>,
    /// Impulse response length in milliseconds; ignored when
    /// `impulse_len` is given.
    #[serde(default = "default_impulse_ms")]
    pub impulse_ms: f64,
    #[serde(default)]
    pub impulse_len: Option<usize>,
    /// Defaults to the next power of two at or above four impulse lengths.
    #[serde(default)]
    pub fft_size: Option<usize>,
    #[serde(default = "default_order")]
    pub order: u32,
    /// Bandwidth factor `b`.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Chirp term `c`; 0 gives the gammatone.
    #[serde(default)]
    pub chirp: f64,
}

fn default_channels() -> usize {
    64
}
fn default_f_min() -> f64 {
    100.0
}
fn default_impulse_ms() -> f64 {
    100.0
}
fn default_order() -> u32 {
    4
}
fn default_bandwidth() -> f64 {
    1.019
}

impl FilterbankSpec {
    pub fn new(sample_rate: f64) -> Self {
        Self {
            sample_rate,
            channels: default_channels(),
            f_min: default_f_min(),
            f_max: None,
            impulse_ms: default_impulse_ms(),
            impulse_len: None,
            fft_size: None,
            order: default_order(),
            bandwidth: default_bandwidth(),
            chirp: 0.0,
        }
    }

    pub fn impulse_samples(&self) -> usize {
        self.impulse_len
            .unwrap_or_else(|| (self.impulse_ms * self.sample_rate / 1000.0).round() as usize)
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| (4 * self.impulse_samples()).next_power_of_two())
    }

    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(0.4 * self.sample_rate)
    }

    pub fn center_freqs(&self) -> Vec<f64> {
        erb_space(self.f_min, self.f_max(), self.channels)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let len = self.impulse_samples();
        if self.channels < 4 {
            return Err(DspError::TooFewChannels {
                channels: self.channels,
                required: 4,
            });
        }
        if len < 2 {
            return Err(DspError::InvalidSpec(format!("impulse length {len} too short")));
        }
        if len >= self.fft_len() {
            return Err(DspError::InvalidSpec(format!(
                "impulse length {len} must be below the FFT size {}",
                self.fft_len()
            )));
        }
        let nyquist = self.sample_rate / 2.0;
        if !(self.f_min > 0.0 && self.f_min < self.f_max() && self.f_max() < nyquist) {
            return Err(DspError::InvalidSpec(format!(
                "band {}..{} Hz does not fit below Nyquist {nyquist} Hz",
                self.f_min,
                self.f_max()
            )));
        }
        if self.order == 0 {
            return Err(DspError::InvalidSpec("filter order must be >= 1".into()));
        }
        Ok(())
    }

    /// Feature alignment of the energy output: the impulse length is causal
    /// history, nothing is non-causal and no scales are invalid.
    pub fn alignment(&self) -> AlignmentParams {
        AlignmentParams::new(0, self.impulse_samples() as u32, 0, 0)
    }
}

/// Complex kernel for one channel, unit gain at `freq`.
pub fn gammachirp_kernel(freq: f64, spec: &FilterbankSpec) -> Vec<Complex64> {
    let fs = spec.sample_rate;
    let decay = 2.0 * PI * spec.bandwidth * erb(freq);
    let mut k: Vec<Complex64> = (0..spec.impulse_samples())
        .map(|j| {
            let t = j as f64 / fs;
            if t == 0.0 {
                return Complex64::default();
            }
            let env = t.powi(spec.order as i32 - 1) * (-decay * t).exp();
            let phase = 2.0 * PI * freq * t + spec.chirp * t.ln();
            Complex64::from_polar(env, phase)
        })
        .collect();
    let gain: Complex64 = k
        .iter()
        .enumerate()
        .map(|(j, h)| h * Complex64::from_polar(1.0, -2.0 * PI * freq * j as f64 / fs))
        .sum();
    let g = gain.norm();
    if g > 0.0 {
        k.iter_mut().for_each(|v| *v /= g);
    }
    k
}

/// Streaming cochleogram state: one overlap-add bank plus the spec.
#[derive(Debug)]
pub struct Cochleogram {
    spec: FilterbankSpec,
    freqs: Vec<f64>,
    bank: OverlapAddBank,
    /// Columns still to drop after the last restart.
    pending_drop: usize,
}

impl Cochleogram {
    pub fn new(spec: FilterbankSpec) -> Result<Self, DspError> {
        spec.validate()?;
        let freqs = spec.center_freqs();
        let kernels: Vec<_> = freqs.iter().map(|&f| gammachirp_kernel(f, &spec)).collect();
        let bank = OverlapAddBank::new(&kernels, spec.fft_len());
        Ok(Self {
            spec,
            freqs,
            bank,
            pending_drop: 0,
        })
    }

    pub fn spec(&self) -> &FilterbankSpec {
        &self.spec
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Energy of one chunk. With `restart` the filter state is cleared and
    /// the first `impulse_len` columns after it are dropped, spilling into
    /// later chunks when this one is shorter.
    pub fn energy(
        &mut self,
        samples: &[f32],
        sample_rate: f64,
        restart: bool,
    ) -> Result<Array2<f32>, DspError> {
        if sample_rate != self.spec.sample_rate {
            return Err(DspError::SpecMismatch {
                expected: self.spec.sample_rate,
                found: sample_rate,
            });
        }
        if restart {
            self.bank.reset();
            self.pending_drop = self.spec.impulse_samples();
        }
        let n = samples.len();
        let drop = self.pending_drop.min(n);
        self.pending_drop -= drop;
        let keep = n.saturating_sub(drop);
        let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        let mut out = Array2::<f32>::zeros((self.freqs.len(), keep));
        self.bank.process(&x, |ch, y| {
            for (o, v) in out.row_mut(ch).iter_mut().zip(&y[n - keep..]) {
                *o = v.norm_sqr() as f32;
            }
        });
        Ok(out)
    }
}

/// Processor kind `gammachirp_filterbank`, publishing feature `E`.
#[derive(Debug)]
pub struct GammachirpFilterbank {
    inner: Cochleogram,
    feature: String,
}

impl GammachirpFilterbank {
    pub const KIND: &'static str = "gammachirp_filterbank";

    pub fn new(spec: FilterbankSpec) -> Result<Self, DspError> {
        Ok(Self {
            inner: Cochleogram::new(spec)?,
            feature: "E".into(),
        })
    }

    pub fn from_params(params: &Params) -> Result<Box<dyn Processor>, ProcessError> {
        let mut params = params.clone();
        let feature = take_feature(Self::KIND, &mut params, "E")?;
        let spec: FilterbankSpec = parse_params(Self::KIND, &params)?;
        let mut fb = Self::new(spec).map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        fb.feature = feature;
        Ok(Box::new(fb))
    }
}

impl Processor for GammachirpFilterbank {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn features(&self) -> Vec<FeatureSpec> {
        vec![FeatureSpec::new(self.feature.clone(), self.inner.spec.alignment())]
    }

    fn process(&mut self, input: &MergedChunk) -> Result<Vec<Output>, ProcessError> {
        let (_, inp) = single_input(Self::KIND, input)?;
        let samples = inp.payload.as_series().ok_or_else(|| {
            ProcessError::kernel(
                Self::KIND,
                DspError::ShapeMismatch("filterbank expects a time series".into()),
            )
        })?;
        let restart = input.continuity.is_discontinuous_subtype();
        let e = self
            .inner
            .energy(samples.as_slice().expect("contiguous"), inp.sample_rate, restart)
            .map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        Ok(vec![Output {
            feature: self.feature.clone(),
            payload: Payload::Grid(e),
            sample_rate: inp.sample_rate,
            channel_freqs: Some(self.inner.freqs.clone()),
        }])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{tone, white_noise};

    fn spec() -> FilterbankSpec {
        let mut s = FilterbankSpec::new(8000.0);
        s.channels = 16;
        s
    }

    #[test]
    fn spec_validation() {
        assert!(spec().validate().is_ok());
        let mut s = spec();
        s.channels = 3;
        assert!(matches!(s.validate(), Err(DspError::TooFewChannels { .. })));
        let mut s = spec();
        s.fft_size = Some(512);
        assert!(s.validate().is_err());
        let mut s = spec();
        s.f_max = Some(5000.0);
        assert!(s.validate().is_err());
        assert_eq!(spec().alignment(), AlignmentParams::new(0, 800, 0, 0));
    }

    #[test]
    fn centre_frequencies_ascend() {
        let f = spec().center_freqs();
        assert_eq!(f.len(), 16);
        assert!((f[0] - 100.0).abs() < 1e-9 && (f[15] - 3200.0).abs() < 1e-6);
        assert!(f.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn kernels_have_unit_centre_gain() {
        let s = spec();
        for f in s.center_freqs() {
            let k = gammachirp_kernel(f, &s);
            let g: Complex64 = k
                .iter()
                .enumerate()
                .map(|(j, h)| h * Complex64::from_polar(1.0, -2.0 * PI * f * j as f64 / 8000.0))
                .sum();
            assert!((g.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_energy() {
        let mut c = Cochleogram::new(spec()).unwrap();
        let e = c.energy(&[0.0; 2000], 8000.0, true).unwrap();
        assert_eq!(e.dim(), (16, 1200));
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let mut c = Cochleogram::new(spec()).unwrap();
        assert!(matches!(
            c.energy(&[0.0; 10], 16000.0, true),
            Err(DspError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn tone_peaks_in_its_channel() {
        let s = spec();
        let freqs = s.center_freqs();
        let target = 9;
        let x = tone(16000, 0, freqs[target], 8000.0, 0.5);
        let mut c = Cochleogram::new(s).unwrap();
        let e = c.energy(&x, 8000.0, true).unwrap();
        let means: Vec<f64> = e
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64)
            .collect();
        let best = means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, target);
        // A real sine of amplitude A has A/2 at the positive frequency the
        // analytic kernel passes, so unit gain gives energy (A/2)^2.
        assert!((means[target] - 0.0625).abs() < 0.0025, "{}", means[target]);
    }

    #[test]
    fn noise_energy_tracks_kernel_power() {
        // For white noise of variance s2 the expected energy per channel is
        // s2 * sum |h_j|^2; this oracle does not use the FFT path.
        let s = spec();
        let x = white_noise(8000 * 20, 1.0, 5);
        let mut c = Cochleogram::new(s.clone()).unwrap();
        let e = c.energy(&x, 8000.0, true).unwrap();
        for (ch, f) in s.center_freqs().iter().enumerate() {
            let power: f64 = gammachirp_kernel(*f, &s).iter().map(|h| h.norm_sqr()).sum();
            let row = e.row(ch);
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64;
            assert!(
                (mean / power - 1.0).abs() < 0.05,
                "channel {ch}: {mean} vs {power}"
            );
        }
    }
}
