use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::mel::mel_filterbank;
use super::stft::Stft;
use super::{FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::exec::Exec;

const PHASE_SEED: u64 = 0x6772_6966_666c_696d;

/// Moore-Penrose inverse of the mel filterbank, `[bins x n_mels]`.
pub fn filterbank_pinv(cfg: &FeatureConfig) -> Array2<f64> {
    let (fb, _) = mel_filterbank(cfg);
    let (rows, cols) = fb.dim();
    let m = DMatrix::from_fn(rows, cols, |r, c| fb[[r, c]]);
    let pinv = m
        .pseudo_inverse(1e-10)
        .expect("svd of a finite filterbank converges");
    Array2::from_shape_fn((cols, rows), |(r, c)| pinv[(r, c)])
}

pub fn invert_mel(mel: &MelSpectrogram, cfg: &FeatureConfig, n_iters: usize) -> Result<Vec<f64>> {
    invert_mel_with(mel, cfg, n_iters, Exec::default())
}

/// Griffin-Lim reconstruction from log-mel magnitudes.
///
/// Linear magnitudes come from the filterbank pseudo-inverse (negative lobes
/// clipped); the initial phase is drawn from a fixed seed so output is
/// deterministic. Returns `(T - 1) * hop` samples.
pub fn invert_mel_with(
    mel: &MelSpectrogram,
    cfg: &FeatureConfig,
    n_iters: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    if n_iters < 1 {
        return Err(Error::invalid("griffin-lim needs at least one iteration"));
    }
    if mel.bands() != cfg.n_mels {
        return Err(Error::Shape(format!(
            "mel has {} bands, expected {}",
            mel.bands(),
            cfg.n_mels
        )));
    }
    let pinv = filterbank_pinv(cfg);
    let mag_mel = mel.data.mapv(|v| (v as f64).exp());
    let lin = mag_mel.dot(&pinv.t()).mapv(|v| v.max(0.0));
    let stft = Stft::new(cfg.frame_size, cfg.hop_size);
    let frames = mel.frames();
    let bins = stft.bins();

    let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
    let mut spec: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|t| {
            (0..bins)
                .map(|k| {
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    Complex::from_polar(lin[[t, k]], phase)
                })
                .collect()
        })
        .collect();

    for _ in 0..n_iters {
        let x = stft.inverse(&spec, exec);
        let rebuilt = stft.forward(&x, exec);
        for (t, (row, new)) in spec.iter_mut().zip(rebuilt.iter()).enumerate() {
            for (k, (c, n)) in row.iter_mut().zip(new.iter()).enumerate() {
                let norm = n.norm();
                let unit = if norm > 1e-12 {
                    n / norm
                } else {
                    Complex::new(1.0, 0.0)
                };
                *c = unit * lin[[t, k]];
            }
        }
    }
    Ok(stft.inverse(&spec, exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::extract_mel;

    #[test]
    fn zero_iterations_is_an_error() {
        let cfg = FeatureConfig::default();
        let mel = MelSpectrogram {
            data: Array2::from_elem((5, 80), cfg.log_min() as f32),
        };
        assert!(invert_mel(&mel, &cfg, 0).is_err());
    }

    #[test]
    fn floor_mel_is_near_silent_with_expected_length() {
        let cfg = FeatureConfig::default();
        let mel = MelSpectrogram {
            data: Array2::from_elem((40, 80), cfg.log_min() as f32),
        };
        let y = invert_mel(&mel, &cfg, 4).unwrap();
        assert_eq!(y.len(), 39 * 128);
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        assert!(20.0 * rms.log10() < -40.0, "rms {rms}");
    }

    #[test]
    fn pinv_satisfies_penrose_identity() {
        let cfg = FeatureConfig::default();
        let (fb, _) = mel_filterbank(&cfg);
        let p = filterbank_pinv(&cfg);
        let back = fb.dot(&p).dot(&fb);
        for (a, b) in back.iter().zip(fb.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let cfg = FeatureConfig::default();
        let x: Vec<f64> = (0..4000).map(|i| 0.3 * (i as f64 * 0.08).sin()).collect();
        let mel = extract_mel(&x, &cfg).unwrap();
        let a = invert_mel_with(&mel, &cfg, 3, Exec::Sequential).unwrap();
        let b = invert_mel_with(&mel, &cfg, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
