//! Deterministic test and calibration signals.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian white noise with standard deviation `std`.
pub fn white_noise(len: usize, std: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| dist.sample(&mut rng) as f32).collect()
}

/// Sine tone; `offset` is the index of the first sample on the global
/// sample clock so consecutive calls continue the same waveform.
pub fn tone(len: usize, offset: u64, freq: f64, sample_rate: f64, amplitude: f64) -> Vec<f32> {
    (0..len as u64)
        .map(|i| {
            let t = (offset + i) as f64 / sample_rate;
            (amplitude * (2.0 * PI * freq * t).sin()) as f32
        })
        .collect()
}

/// Tone plus white noise, the standard synthetic test input.
pub fn tone_in_noise(
    len: usize,
    sample_rate: f64,
    freq: f64,
    tone_amp: f64,
    noise_std: f64,
    seed: u64,
) -> Vec<f32> {
    let t = tone(len, 0, freq, sample_rate, tone_amp);
    let n = white_noise(len, noise_std, seed);
    t.iter().zip(&n).map(|(a, b)| a + b).collect()
}
