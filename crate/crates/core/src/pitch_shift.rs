//! Inference-time pitch normalization toward a target speaker's register.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{voiced_mean_many, PitchContour};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchShiftConfig {
    pub f0_lower_bound: f64,
    pub enabled: bool,
}

impl Default for PitchShiftConfig {
    fn default() -> Self {
        PitchShiftConfig {
            f0_lower_bound: 65.0,
            enabled: true,
        }
    }
}

impl PitchShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f0_lower_bound > 0.0 && self.f0_lower_bound.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "f0_lower_bound must be positive, got {}",
                self.f0_lower_bound
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStats {
    pub voiced_mean: Option<f64>,
    pub voiced_frames: usize,
}

pub fn reference_stats(refs: &[PitchContour]) -> ReferenceStats {
    let voiced_frames = refs.iter().map(PitchContour::voiced_frames).sum();
    ReferenceStats {
        voiced_mean: voiced_mean_many(refs.iter().map(|r| r.values.as_slice())).ok(),
        voiced_frames,
    }
}

/// Result of [`shift`] with the applied offset for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub contour: PitchContour,
    pub delta: f64,
}

/// Adds `mean(refs) - mean(source)` to every voiced frame, then raises
/// frames below the lower bound to it.
pub fn shift(
    source: &PitchContour,
    refs: &[PitchContour],
    cfg: &PitchShiftConfig,
) -> Result<PitchContour> {
    shift_with_delta(source, refs, cfg).map(|s| s.contour)
}

pub fn shift_with_delta(
    source: &PitchContour,
    refs: &[PitchContour],
    cfg: &PitchShiftConfig,
) -> Result<Shifted> {
    if !cfg.enabled {
        return Ok(Shifted {
            contour: source.clone(),
            delta: 0.0,
        });
    }
    cfg.validate()?;
    let src_mean = voiced_mean_many([source.values.as_slice()])?;
    let ref_mean = reference_stats(refs)
        .voiced_mean
        .ok_or(Error::NoVoicedFrames)?;
    let delta = ref_mean - src_mean;
    let values = source
        .values
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (v + delta).max(cfg.f0_lower_bound)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Shifted {
        contour: PitchContour::new(values),
        delta,
    })
}
