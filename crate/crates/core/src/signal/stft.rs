use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::exec::Exec;

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Reflection padding (no edge repeat) that stays defined for any length.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    assert!(!x.is_empty(), "cannot pad an empty signal");
    let n = x.len();
    (0..n + 2 * pad)
        .map(|i| x[reflect_index(i as isize - pad as isize, n)])
        .collect()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centered short-time Fourier transform with a Hann window.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window: hann(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    /// One-sided spectra, one row per frame.
    pub fn forward(&self, x: &[f64], exec: Exec) -> Vec<Vec<Complex<f64>>> {
        let padded = reflect_pad(x, self.n_fft / 2);
        let frames = self.frame_count(x.len());
        exec.map_range(frames, |t| {
            let start = t * self.hop;
            let mut buf: Vec<Complex<f64>> = padded[start..start + self.n_fft]
                .iter()
                .zip(&self.window)
                .map(|(s, w)| Complex::new(s * w, 0.0))
                .collect();
            self.fwd.process(&mut buf);
            buf.truncate(self.bins());
            buf
        })
    }

    pub fn magnitude(&self, x: &[f64], exec: Exec) -> Array2<f64> {
        let spec = self.forward(x, exec);
        let mut out = Array2::zeros((spec.len(), self.bins()));
        for (t, row) in spec.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                out[[t, k]] = c.norm();
            }
        }
        out
    }

    /// Weighted overlap-add inverse; output has `(T - 1) * hop` samples.
    pub fn inverse(&self, spec: &[Vec<Complex<f64>>], exec: Exec) -> Vec<f64> {
        let frames = spec.len();
        if frames == 0 {
            return Vec::new();
        }
        let n = self.n_fft;
        let scale = 1.0 / n as f64;
        let blocks: Vec<Vec<f64>> = exec.map(spec, |half| {
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n - half.len() + 1 {
                buf[n - k] = half[k].conj();
            }
            buf[0].im = 0.0;
            if n.is_multiple_of(2) {
                buf[n / 2].im = 0.0;
            }
            self.inv.process(&mut buf);
            buf.iter()
                .zip(&self.window)
                .map(|(c, w)| c.re * scale * w)
                .collect()
        });
        let total = (frames - 1) * self.hop + n;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        for (t, block) in blocks.iter().enumerate() {
            let start = t * self.hop;
            for (i, (&v, &w)) in block.iter().zip(&self.window).enumerate() {
                acc[start + i] += v;
                norm[start + i] += w * w;
            }
        }
        let pad = n / 2;
        (pad..pad + (frames - 1) * self.hop)
            .map(|i| {
                if norm[i] > 1e-8 {
                    acc[i] / norm[i]
                } else {
                    0.0
                }
            })
            .collect()
    }
}
