use super::stft::reflect_pad;
use super::{FeatureConfig, PitchContour};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Candidate peaks must reach this fraction of the best peak; the shortest
/// qualifying lag wins, which suppresses sub-octave picks.
const PEAK_RATIO: f64 = 0.9;

pub fn extract_f0(waveform: &[f64], cfg: &FeatureConfig) -> Result<PitchContour> {
    extract_f0_with(waveform, cfg, Exec::default())
}

/// Normalized-autocorrelation f0 tracker, frame-synchronous with
/// [`extract_mel`](super::extract_mel).
pub fn extract_f0_with(waveform: &[f64], cfg: &FeatureConfig, exec: Exec) -> Result<PitchContour> {
    if waveform.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    let sr = cfg.sample_rate as f64;
    let tau_min = ((sr / cfg.f0_ceil).floor() as usize).max(2);
    let tau_max = (sr / cfg.f0_floor).ceil() as usize;
    let window = cfg.f0_window;
    if window <= tau_max + 2 + cfg.frame_size / 4 {
        return Err(Error::invalid(format!(
            "f0 window {window} too short for lags up to {tau_max}"
        )));
    }
    let padded = reflect_pad(waveform, window / 2);
    let frames = cfg.frame_count(waveform.len());
    let values = exec.map_range(frames, |t| {
        let seg = &padded[t * cfg.hop_size..t * cfg.hop_size + window];
        estimate_frame(seg, cfg, sr, tau_min, tau_max)
    });
    Ok(PitchContour { values })
}

fn estimate_frame(
    seg: &[f64],
    cfg: &FeatureConfig,
    sr: f64,
    tau_min: usize,
    tau_max: usize,
) -> f64 {
    let w = seg.len();
    let mid = w / 2;
    let half = cfg.frame_size / 2;
    let core = &seg[mid - half..mid + half];
    let rms = (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt();
    if rms < cfg.voicing_rms {
        return 0.0;
    }
    let mean = seg.iter().sum::<f64>() / w as f64;
    let x: Vec<f64> = seg.iter().map(|v| v - mean).collect();

    let m = w - tau_max - 1;
    let e0: f64 = x[..m].iter().map(|v| v * v).sum();
    if e0 <= 0.0 {
        return 0.0;
    }
    let lo = tau_min - 1;
    let hi = tau_max + 1;
    let mut r = vec![0.0; hi - lo + 1];
    let mut e_tau: f64 = x[lo..lo + m].iter().map(|v| v * v).sum();
    for tau in lo..=hi {
        if tau > lo {
            e_tau += x[tau + m - 1] * x[tau + m - 1] - x[tau - 1] * x[tau - 1];
        }
        let cross: f64 = x[..m]
            .iter()
            .zip(&x[tau..tau + m])
            .map(|(a, b)| a * b)
            .sum();
        let denom = (e0 * e_tau.max(0.0)).sqrt();
        r[tau - lo] = if denom > 0.0 { cross / denom } else { 0.0 };
    }
    let at = |tau: usize| r[tau - lo];
    let best = (tau_min..=tau_max)
        .map(at)
        .fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.voicing_clarity {
        return 0.0;
    }
    let Some(tau) = (tau_min..=tau_max).find(|&tau| {
        let v = at(tau);
        v >= PEAK_RATIO * best && v >= at(tau - 1) && v >= at(tau + 1)
    }) else {
        return 0.0;
    };
    let (a, b, c) = (at(tau - 1), at(tau), at(tau + 1));
    let curv = a - 2.0 * b + c;
    let delta = if curv < 0.0 {
        (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = (sr / (tau as f64 + delta)) as f32 as f64;
    if f0 < cfg.f0_floor || f0 > cfg.f0_ceil {
        0.0
    } else {
        f0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, secs: f64, harmonics: &[f64]) -> Vec<f64> {
        let n = (secs * 22050.0) as usize;
        (0..n)
            .map(|i| {
                let ph = 2.0 * std::f64::consts::PI * freq * i as f64 / 22050.0;
                harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * ((k + 1) as f64 * ph).sin())
                    .sum::<f64>()
            })
            .collect()
    }

    fn interior(c: &PitchContour) -> &[f64] {
        &c.values[8..c.len() - 8]
    }

    #[test]
    fn pure_sine_220() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&tone(220.0, 1.0, &[0.5]), &cfg).unwrap();
        assert_eq!(f0.len(), 173);
        for &v in interior(&f0) {
            assert!((v - 220.0).abs() < 3.0, "{v}");
        }
    }

    #[test]
    fn harmonic_110_and_extremes() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&tone(110.0, 0.5, &[0.3, 0.2, 0.15, 0.1, 0.05]), &cfg).unwrap();
        for &v in interior(&f0) {
            assert!((v - 110.0).abs() < 3.0, "{v}");
        }
        // weak fundamental, strong second harmonic
        let f0 = extract_f0(&tone(180.0, 0.5, &[0.05, 0.4, 0.1]), &cfg).unwrap();
        for &v in interior(&f0) {
            assert!((v - 180.0).abs() < 3.0, "{v}");
        }
        for freq in [70.0, 1000.0] {
            let f0 = extract_f0(&tone(freq, 0.5, &[0.5]), &cfg).unwrap();
            for &v in interior(&f0) {
                assert!((v - freq).abs() < 3.0, "{freq}: {v}");
            }
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&vec![0.0; 5000], &cfg).unwrap();
        assert!(f0.values.iter().all(|&v| v == 0.0));
        assert!(extract_f0(&[], &cfg).is_err());
    }

    #[test]
    fn modes_agree() {
        let cfg = FeatureConfig::default();
        let x = tone(260.0, 0.3, &[0.4, 0.1]);
        assert_eq!(
            extract_f0_with(&x, &cfg, Exec::Sequential).unwrap(),
            extract_f0_with(&x, &cfg, Exec::Parallel).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lengths_agree_with_mel_and_values_are_valid(
            samples in proptest::collection::vec(-1.0f64..1.0, 1..3000),
        ) {
            let cfg = FeatureConfig::default();
            let f0 = extract_f0(&samples, &cfg).unwrap();
            let mel = crate::signal::extract_mel(&samples, &cfg).unwrap();
            prop_assert_eq!(f0.len(), mel.frames());
            prop_assert!(f0.check(&cfg).is_ok());
        }
    }
}
