//! Deterministic signal-processing kernels.
//!
//! All kernels are pure: identical inputs give bit-identical outputs in
//! both [`Exec`](crate::exec::Exec) modes.

mod f0;
mod griffin_lim;
mod mel;
mod stft;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use f0::{extract_f0, extract_f0_with};
pub use griffin_lim::{invert_mel, invert_mel_with};
pub use mel::{extract_mel, extract_mel_with, hz_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{reflect_pad, Stft};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum mel magnitude before taking the log.
    pub log_floor: f64,
    /// Mel magnitude mapped to 1.0 by [`FeatureConfig::normalize`].
    pub log_ceil: f64,
    pub f0_floor: f64,
    pub f0_ceil: f64,
    /// Analysis window of the f0 estimator, in samples.
    pub f0_window: usize,
    /// RMS below which a frame is unvoiced.
    pub voicing_rms: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_clarity: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 22050,
            frame_size: 512,
            hop_size: 128,
            n_mels: 80,
            fmin: 0.0,
            fmax: 11025.0,
            log_floor: 1e-5,
            log_ceil: 100.0,
            f0_floor: 65.0,
            f0_ceil: 1100.0,
            f0_window: 1024,
            voicing_rms: 3e-3,
            voicing_clarity: 0.5,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_size > self.hop_size && self.hop_size > 0) {
            return Err(Error::invalid(format!(
                "need frame_size > hop_size > 0, got {} / {}",
                self.frame_size, self.hop_size
            )));
        }
        if self.n_mels != 80 {
            return Err(Error::invalid(format!(
                "n_mels must be 80, got {}",
                self.n_mels
            )));
        }
        if !(self.fmax > self.fmin && self.fmax <= self.sample_rate as f64 / 2.0 + 1e-9) {
            return Err(Error::invalid(
                "mel range must satisfy fmin < fmax <= nyquist",
            ));
        }
        if !(self.f0_floor > 0.0 && self.f0_ceil > self.f0_floor) {
            return Err(Error::invalid("need 0 < f0_floor < f0_ceil"));
        }
        if !(self.log_floor > 0.0 && self.log_ceil > self.log_floor) {
            return Err(Error::invalid("need 0 < log_floor < log_ceil"));
        }
        Ok(())
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    /// Frames produced for a waveform of `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        n / self.hop_size + 1
    }

    /// Short stable digest used to check that a corpus shares one configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn log_min(&self) -> f64 {
        self.log_floor.ln()
    }

    /// Maps log-mel values onto [0, 1].
    pub fn normalize(&self, mel: &MelSpectrogram) -> Array2<f64> {
        let lo = self.log_floor.ln();
        let span = self.log_ceil.ln() - lo;
        mel.data.mapv(|v| ((v as f64 - lo) / span).clamp(0.0, 1.0))
    }

    /// Inverse of [`FeatureConfig::normalize`], clamping into the valid range.
    pub fn denormalize(&self, norm: &Array2<f64>) -> MelSpectrogram {
        let lo = self.log_floor.ln();
        let span = self.log_ceil.ln() - lo;
        MelSpectrogram {
            data: norm.mapv(|v| {
                let v = if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (lo + v * span) as f32
            }),
        }
    }
}

/// `[T x 80]` log-mel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f32>,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bands(&self) -> usize {
        self.data.ncols()
    }

    pub fn check(&self, cfg: &FeatureConfig) -> Result<()> {
        if self.bands() != cfg.n_mels {
            return Err(Error::Shape(format!(
                "mel has {} bands, expected {}",
                self.bands(),
                cfg.n_mels
            )));
        }
        let floor = cfg.log_min() as f32;
        if let Some(v) = self
            .data
            .iter()
            .find(|v| !v.is_finite() || **v < floor - 1e-4)
        {
            return Err(Error::format("mel", format!("invalid cell value {v}")));
        }
        Ok(())
    }
}

/// Per-frame f0 in Hz; `0.0` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PitchContour {
    pub values: Vec<f64>,
}

impl PitchContour {
    pub fn new(values: Vec<f64>) -> Self {
        PitchContour { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_frames(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn check(&self, cfg: &FeatureConfig) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            let ok = v == 0.0 || (v >= cfg.f0_floor - 1e-6 && v <= cfg.f0_ceil + 1e-6);
            if !ok {
                return Err(Error::format("f0", format!("frame {i} has f0 {v}")));
            }
        }
        Ok(())
    }
}

/// Mean of the strictly positive entries.
pub fn voiced_mean(f0: &[f64]) -> Result<f64> {
    voiced_mean_many([f0])
}

/// Frame-weighted voiced mean over several contours taken together.
pub fn voiced_mean_many<'a, I>(contours: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (sum, n) = contours
        .into_iter()
        .flat_map(|c| c.iter())
        .filter(|&&v| v > 0.0)
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        Err(Error::NoVoicedFrames)
    } else {
        Ok(sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn voiced_mean_cases() {
        assert_eq!(voiced_mean(&[0.0, 100.0, 200.0, 0.0]).unwrap(), 150.0);
        assert_eq!(voiced_mean(&[440.0]).unwrap(), 440.0);
        let m = voiced_mean_many([&[100.0, 0.0][..], &[200.0, 200.0][..]]).unwrap();
        assert!((m - 500.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            voiced_mean(&[0.0, 0.0]),
            Err(Error::NoVoicedFrames)
        ));
        assert!(matches!(voiced_mean(&[]), Err(Error::NoVoicedFrames)));
    }

    #[test]
    fn default_config_is_valid_and_digest_is_stable() {
        let cfg = FeatureConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.digest(), FeatureConfig::default().digest());
        let mut other = cfg.clone();
        other.hop_size = 256;
        assert_ne!(cfg.digest(), other.digest());
        other.hop_size = 600;
        assert!(other.validate().is_err());
        assert_eq!(cfg.frame_count(22050), 173);
    }

    #[test]
    fn normalization_round_trips_inside_range() {
        let cfg = FeatureConfig::default();
        let mel = MelSpectrogram {
            data: Array2::from_shape_fn((3, 80), |(t, b)| {
                (-11.0 + 0.1 * (t * 80 + b) as f64 / 10.0) as f32
            }),
        };
        let back = cfg.denormalize(&cfg.normalize(&mel));
        for (a, b) in mel.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn voiced_mean_ignores_unvoiced_frames(
            voiced in proptest::collection::vec(65.0f64..1100.0, 1..50),
            gaps in proptest::collection::vec(0usize..3, 50),
        ) {
            let base = voiced_mean(&voiced).unwrap();
            let mut padded = Vec::new();
            for (v, g) in voiced.iter().zip(&gaps) {
                padded.extend(std::iter::repeat_n(0.0, *g));
                padded.push(*v);
            }
            padded.push(0.0);
            prop_assert_eq!(voiced_mean(&padded).unwrap().to_bits(), base.to_bits());
        }

        #[test]
        fn voiced_mean_of_singleton_is_identity(x in 65.0f64..1100.0) {
            prop_assert_eq!(voiced_mean(&[x]).unwrap(), x);
        }
    }
}
