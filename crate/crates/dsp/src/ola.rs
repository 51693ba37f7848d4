//! FFT overlap-and-add convolution of one real input with a bank of complex
//! kernels, carrying the convolution tails between calls.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct OverlapAddBank {
    fft_size: usize,
    block: usize,
    kernel_len: usize,
    spectra: Vec<Vec<Complex64>>,
    tails: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OverlapAddBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OverlapAddBank")
            .field("fft_size", &self.fft_size)
            .field("block", &self.block)
            .field("kernel_len", &self.kernel_len)
            .field("channels", &self.spectra.len())
            .finish()
    }
}

impl OverlapAddBank {
    /// All kernels must share one length, shorter than `fft_size`.
    pub fn new(kernels: &[Vec<Complex64>], fft_size: usize) -> Self {
        let kernel_len = kernels.first().map_or(1, Vec::len);
        assert!(kernels.iter().all(|k| k.len() == kernel_len));
        assert!(kernel_len < fft_size, "kernel must be shorter than the FFT");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_size);
        let inverse = planner.plan_fft_inverse(fft_size);
        let spectra = kernels
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::default(); fft_size];
                buf[..kernel_len].copy_from_slice(k);
                forward.process(&mut buf);
                buf
            })
            .collect();
        Self {
            fft_size,
            block: fft_size - kernel_len + 1,
            kernel_len,
            spectra,
            tails: vec![vec![Complex64::default(); kernel_len - 1]; kernels.len()],
            forward,
            inverse,
        }
    }

    pub fn channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn reset(&mut self) {
        self.tails
            .iter_mut()
            .for_each(|t| t.fill(Complex64::default()));
    }

    /// Convolves `input` with every kernel. `sink(channel, y)` receives the
    /// `input.len()` outputs aligned with the input samples; contributions
    /// spilling past the end are kept for the next call.
    pub fn process(&mut self, input: &[f64], mut sink: impl FnMut(usize, &[Complex64])) {
        let n = input.len();
        let scale = 1.0 / self.fft_size as f64;
        let block_spectra: Vec<(usize, Vec<Complex64>)> = (0..n)
            .step_by(self.block)
            .map(|start| {
                let end = (start + self.block).min(n);
                let mut buf = vec![Complex64::default(); self.fft_size];
                for (b, &x) in buf.iter_mut().zip(&input[start..end]) {
                    b.re = x;
                }
                self.forward.process(&mut buf);
                (start, buf)
            })
            .collect();

        let span = n + self.kernel_len - 1;
        let mut acc = vec![Complex64::default(); span];
        let mut work = vec![Complex64::default(); self.fft_size];
        let mut scratch = vec![Complex64::default(); self.inverse.get_inplace_scratch_len()];
        for ch in 0..self.spectra.len() {
            acc.fill(Complex64::default());
            for (a, t) in acc.iter_mut().zip(&self.tails[ch]) {
                *a += *t;
            }
            let h = &self.spectra[ch];
            for (start, spec) in &block_spectra {
                for ((w, x), k) in work.iter_mut().zip(spec).zip(h) {
                    *w = x * k;
                }
                self.inverse.process_with_scratch(&mut work, &mut scratch);
                let len = (span - start).min(self.fft_size);
                for (a, w) in acc[*start..*start + len].iter_mut().zip(&work) {
                    *a += w * scale;
                }
            }
            sink(ch, &acc[..n]);
            self.tails[ch].copy_from_slice(&acc[n..]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(kernel: &[Complex64], x: &[f64]) -> Vec<Complex64> {
        (0..x.len())
            .map(|n| {
                kernel
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j <= n)
                    .map(|(j, k)| k * x[n - j])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn streaming_matches_direct_convolution() {
        let kernels: Vec<Vec<Complex64>> = (0..3)
            .map(|c| {
                (0..37)
                    .map(|j| Complex64::new((j as f64 * 0.3 + c as f64).sin(), (j as f64 * 0.1).cos()))
                    .collect()
            })
            .collect();
        let x: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        for chunk in [1usize, 50, 128, 999] {
            let mut bank = OverlapAddBank::new(&kernels, 64);
            let mut got = vec![Vec::new(); 3];
            for part in x.chunks(chunk) {
                bank.process(part, |ch, y| got[ch].extend_from_slice(y));
            }
            for (ch, k) in kernels.iter().enumerate() {
                let want = direct(k, &x);
                for (a, b) in got[ch].iter().zip(&want) {
                    assert!((a - b).norm() < 1e-10, "chunk {chunk}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn reset_forgets_tails() {
        let kernels = vec![vec![Complex64::new(1.0, 0.0); 4]];
        let mut bank = OverlapAddBank::new(&kernels, 16);
        bank.process(&[1.0; 8], |_, _| {});
        bank.reset();
        let mut out = Vec::new();
        bank.process(&[0.0; 4], |_, y| out.extend_from_slice(y));
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }
}
