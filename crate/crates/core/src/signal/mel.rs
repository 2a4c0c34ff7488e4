use ndarray::Array2;

use super::stft::Stft;
use super::{FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::exec::Exec;

const MIN_LOG_HZ: f64 = 1000.0;
const LIN_SLOPE: f64 = 200.0 / 3.0;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / LIN_SLOPE
    } else {
        MIN_LOG_HZ / LIN_SLOPE + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let min_log_mel = MIN_LOG_HZ / LIN_SLOPE;
    if mel < min_log_mel {
        mel * LIN_SLOPE
    } else {
        MIN_LOG_HZ * (log_step() * (mel - min_log_mel)).exp()
    }
}

/// Triangular filters with unit peak, `[n_mels x (frame_size / 2 + 1)]`.
///
/// Also returns the center frequency of each band.
pub fn mel_filterbank(cfg: &FeatureConfig) -> (Array2<f64>, Vec<f64>) {
    let bins = cfg.frame_size / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.frame_size as f64;
    let fb = Array2::from_shape_fn((cfg.n_mels, bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let rising = (f - l) / (c - l);
        let falling = (r - f) / (r - c);
        rising.min(falling).max(0.0)
    });
    (fb, edges[1..=cfg.n_mels].to_vec())
}

pub fn extract_mel(waveform: &[f64], cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    extract_mel_with(waveform, cfg, Exec::default())
}

/// Log-mel magnitude spectrogram with `T = floor(N / hop) + 1`.
pub fn extract_mel_with(
    waveform: &[f64],
    cfg: &FeatureConfig,
    exec: Exec,
) -> Result<MelSpectrogram> {
    if waveform.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    let stft = Stft::new(cfg.frame_size, cfg.hop_size);
    let mag = stft.magnitude(waveform, exec);
    let (fb, _) = mel_filterbank(cfg);
    let mel = mag.dot(&fb.t());
    let floor = cfg.log_floor;
    Ok(MelSpectrogram {
        data: mel.mapv(|v| v.max(floor).ln() as f32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, sr: f64) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn mel_scale_inverts() {
        for hz in [0.0, 440.0, 999.0, 1000.0, 4000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filterbank_has_no_empty_band() {
        let (fb, centers) = mel_filterbank(&FeatureConfig::default());
        assert_eq!(fb.dim(), (80, 257));
        for m in 0..80 {
            assert!(fb.row(m).sum() > 0.0, "band {m} is empty");
        }
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn frame_count_follows_hop() {
        let cfg = FeatureConfig::default();
        let mel = extract_mel(&vec![0.1; 22050], &cfg).unwrap();
        assert_eq!(mel.data.dim(), (173, 80));
        assert_eq!(extract_mel(&[0.3], &cfg).unwrap().frames(), 1);
        assert!(extract_mel(&[], &cfg).is_err());
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let cfg = FeatureConfig::default();
        let mel = extract_mel(&vec![0.0; 4000], &cfg).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(mel.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn sine_peaks_in_the_band_nearest_its_frequency() {
        let cfg = FeatureConfig::default();
        let (_, centers) = mel_filterbank(&cfg);
        // oracle: band whose center frequency is closest to 1 kHz
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let mel = extract_mel(&sine(1000.0, 22050, 22050.0), &cfg).unwrap();
        for t in 4..mel.frames() - 4 {
            let row = mel.data.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(
                argmax.abs_diff(expected) <= 1,
                "frame {t}: {argmax} vs {expected}"
            );
            if t > 4 {
                let prev = mel.data.row(t - 1);
                let prev_arg = prev
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(argmax, prev_arg);
            }
        }
    }

    #[test]
    fn modes_agree_bit_for_bit() {
        let cfg = FeatureConfig::default();
        let x = sine(330.0, 5000, 22050.0);
        let a = extract_mel_with(&x, &cfg, Exec::Sequential).unwrap();
        let b = extract_mel_with(&x, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
