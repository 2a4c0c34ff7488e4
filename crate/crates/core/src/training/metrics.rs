use std::fmt;

use super::trainer::TrainSet;
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{extract_f0_with, extract_mel_with};
use crate::speaker_encoders::{fixed_embed, ReferenceMel};
use crate::synth::Synthesizer;
use crate::vocoder::{build_conditioning, vocode, VocoderBackend};

pub const METRICS_HEADER: &str = "step,mel_L1,f0_consistency,spk_cosine";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mel_l1: f64,
    /// RMSE in Hz on frames voiced in both input and re-estimated f0.
    pub f0_consistency: f64,
    pub spk_cosine: f64,
}

impl Metrics {
    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{:.6},{:.6},{:.6}",
            self.mel_l1, self.f0_consistency, self.spk_cosine
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mel_L1 {:.4}  f0_consistency {:.2} Hz  spk_cosine {:.4}",
            self.mel_l1, self.f0_consistency, self.spk_cosine
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub backend: VocoderBackend,
    /// Vocode predictions for the f0 and speaker metrics; they are NaN otherwise.
    pub audio_metrics: bool,
    pub n_refs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            backend: VocoderBackend::GriffinLim { iters: 32 },
            audio_metrics: true,
            n_refs: 2,
        }
    }
}

pub fn evaluate(synth: &Synthesizer, set: &TrainSet, exec: Exec) -> Result<Metrics> {
    evaluate_with(synth, set, &EvalOptions::default(), exec)
}

struct ItemEval {
    l1: f64,
    cells: usize,
    f0_sq: f64,
    f0_frames: usize,
    cosine: f64,
}

/// Objective metrics with deterministic references: the first `n_refs`
/// candidates of each item.
pub fn evaluate_with(
    synth: &Synthesizer,
    set: &TrainSet,
    opts: &EvalOptions,
    exec: Exec,
) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let fc = &synth.cfg.features;
    let backend = synth.fixed_backend();
    let per = exec.try_map(&set.items, |item| -> Result<ItemEval> {
        let refs: Vec<usize> = item
            .candidates
            .iter()
            .cycle()
            .take(opts.n_refs.max(1))
            .copied()
            .collect();
        let ref_mels: Vec<Mat> = refs.iter().map(|&j| set.items[j].target.clone()).collect();
        let pred = synth.predict(&item.inputs, &item.spk, &ref_mels)?;
        let l1: f64 = pred
            .iter()
            .zip(&item.target)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let mut out = ItemEval {
            l1,
            cells: pred.len(),
            f0_sq: 0.0,
            f0_frames: 0,
            cosine: f64::NAN,
        };
        if !opts.audio_metrics {
            return Ok(out);
        }
        let mel = pred.mapv(|v| v.clamp(0.0, 1.0));
        let cond = build_conditioning(&mel, &item.inputs.pitch_bins, &synth.vocoder_front_end())?;
        let wave = vocode(&cond, opts.backend, fc, Exec::Sequential)?;
        let est = extract_f0_with(&wave, fc, Exec::Sequential)?;
        for (a, b) in item.f0.iter().zip(&est.values) {
            if *a > 0.0 && *b > 0.0 {
                out.f0_sq += (a - b) * (a - b);
                out.f0_frames += 1;
            }
        }
        let out_mel = fc.normalize(&extract_mel_with(&wave, fc, Exec::Sequential)?);
        let e_out = backend.embed_one(&ReferenceMel {
            id: &item.id,
            mel: &out_mel,
        })?;
        let r: Vec<ReferenceMel> = refs
            .iter()
            .map(|&j| ReferenceMel {
                id: &set.items[j].id,
                mel: &set.items[j].target,
            })
            .collect();
        let e_ref = fixed_embed(&r, &backend)?;
        out.cosine = e_out.cosine(&e_ref);
        Ok(out)
    })?;
    let cells: usize = per.iter().map(|p| p.cells).sum();
    let frames: usize = per.iter().map(|p| p.f0_frames).sum();
    Ok(Metrics {
        mel_l1: per.iter().map(|p| p.l1).sum::<f64>() / cells as f64,
        f0_consistency: if frames == 0 {
            f64::NAN
        } else {
            (per.iter().map(|p| p.f0_sq).sum::<f64>() / frames as f64).sqrt()
        },
        spk_cosine: per.iter().map(|p| p.cosine).sum::<f64>() / per.len() as f64,
    })
}
