//! Optimization: learning-rate schedule, AdamW, length-bucketed batching,
//! the training loop with checkpoints, and objective evaluation.

mod batches;
mod metrics;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batches::{make_batches, make_batches_from_lengths};
pub use metrics::{evaluate, evaluate_with, EvalOptions, Metrics, METRICS_HEADER};
pub use optim::{AdamW, AdamWState};
pub use trainer::{masked_l1, TrainItem, TrainSet, Trainer, CONFIG_FILE, OPTIM_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: u64,
    /// `d` in the schedule; normally the model width.
    pub d_model: usize,
    pub max_steps: u64,
    /// Maximum total frames per batch.
    pub token_budget: usize,
    pub clip_norm: f64,
    pub n_refs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.01,
            warmup: 4000,
            d_model: 256,
            max_steps: 2_000_000,
            token_budget: 8000,
            clip_norm: 1.0,
            n_refs: 2,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn toy() -> Self {
        OptimizerConfig {
            warmup: 200,
            d_model: 64,
            max_steps: 5000,
            token_budget: 2000,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.beta1) || !open(self.beta2) {
            return Err(Error::invalid("betas must lie in (0, 1)"));
        }
        if self.warmup < 1 {
            return Err(Error::invalid("warmup must be at least 1"));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.d_model == 0 || self.n_refs == 0 {
            return Err(Error::invalid("eps, d_model and n_refs must be positive"));
        }
        if self.clip_norm <= 0.0 || self.token_budget == 0 {
            return Err(Error::invalid(
                "clip_norm and token_budget must be positive",
            ));
        }
        Ok(())
    }
}

/// `d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("learning-rate schedule starts at step 1"));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::invalid("warmup and d_model must be positive"));
    }
    let s = step as f64;
    let w = warmup as f64;
    let ramp = if step >= warmup {
        s.powf(-0.5)
    } else {
        s * w.powf(-1.5)
    };
    Ok((d_model as f64).powf(-0.5) * ramp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_peak_and_decay() {
        let peak = lr_schedule(4000, 256, 4000).unwrap();
        assert!((peak - 1.0 / (16.0 * 4000f64.sqrt())).abs() < 1e-18);
        assert!((peak - 9.8821e-4).abs() < 1e-8);
        assert!(lr_schedule(8000, 256, 4000).unwrap() < peak);
        assert!(lr_schedule(0, 256, 4000).is_err());
        for (d, w) in [(64, 1), (64, 200), (256, 4000), (512, 12345)] {
            let want = (d as f64).powf(-0.5) * (w as f64).powf(-0.5);
            assert_eq!(lr_schedule(w, d, w).unwrap(), want);
        }
    }

    #[test]
    fn default_and_toy_configs_validate() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(OptimizerConfig::toy().validate().is_ok());
        let bad = OptimizerConfig {
            beta2: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedule_rises_then_falls(w in 1u64..5000, a in 1u64..20000) {
            let lr = |s| lr_schedule(s, 64, w).unwrap();
            let b = a + 1;
            let (sa, sw) = (a as f64, w as f64);
            let by_min = 64f64.powf(-0.5) * sa.powf(-0.5).min(sa * sw.powf(-1.5));
            prop_assert!((lr(a) - by_min).abs() <= 1e-15 * by_min);
            if b <= w {
                prop_assert!(lr(a) < lr(b));
            } else if a >= w {
                prop_assert!(lr(a) > lr(b));
            }
        }
    }
}
