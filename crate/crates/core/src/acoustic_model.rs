//! Non-autoregressive acoustic model: phoneme encoder, length regulator,
//! pitch embedding, speaker conditioning and mel decoder.

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{sinusoid_positions, FftBlock, Linear};
use crate::signal::PitchContour;
use crate::speaker_encoders::{SpeakerEmbedding, FIXED_EMBED_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub filter: usize,
    pub kernel: usize,
    pub n_mels: usize,
    pub pitch_bins: usize,
    pub dropout: f64,
    pub n_phonemes: usize,
    pub spk_dim: usize,
    /// Width of the high-fidelity embeddings fed to the decoder.
    pub hf_dim: usize,
    pub f0_floor: f64,
    pub f0_ceil: f64,
    /// Sinusoidal positions on encoder and decoder inputs. Off only in tests.
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::paper(crate::corpus::TOY_NOTE_SYMBOLS + 1)
    }
}

impl ModelConfig {
    pub fn paper(n_phonemes: usize) -> Self {
        ModelConfig {
            hidden: 256,
            encoder_blocks: 4,
            decoder_blocks: 4,
            heads: 2,
            filter: 1024,
            kernel: 9,
            n_mels: 80,
            pitch_bins: 256,
            dropout: 0.1,
            n_phonemes,
            spk_dim: FIXED_EMBED_DIM,
            hf_dim: 256,
            f0_floor: 65.0,
            f0_ceil: 1100.0,
            positional: true,
        }
    }

    pub fn toy(n_phonemes: usize) -> Self {
        ModelConfig {
            hidden: 64,
            encoder_blocks: 1,
            decoder_blocks: 1,
            filter: 128,
            hf_dim: 64,
            ..ModelConfig::paper(n_phonemes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.pitch_bins < 2 {
            return Err(Error::invalid("pitch_bins must be at least 2"));
        }
        if self.kernel == 0 || self.filter == 0 || self.n_phonemes == 0 || self.n_mels == 0 {
            return Err(Error::invalid("model sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.f0_floor > 0.0 && self.f0_ceil > self.f0_floor) {
            return Err(Error::invalid("need 0 < f0_floor < f0_ceil"));
        }
        Ok(())
    }
}

/// Log-scale pitch bins; bin 0 is unvoiced.
pub fn quantize_pitch(f0: &PitchContour, f0_floor: f64, f0_ceil: f64, bins: usize) -> Vec<usize> {
    let (lo, hi) = (f0_floor.ln(), f0_ceil.ln());
    let span = (bins - 2) as f64;
    f0.values
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0
            } else {
                let x = (span * (v.ln() - lo) / (hi - lo)).floor();
                (1.0 + x).clamp(1.0, (bins - 1) as f64) as usize
            }
        })
        .collect()
}

/// Initial pitch table: sinusoids over the bin index with wavelengths from
/// 16 to 1024 bins, so neighbouring bins start out similar. Bin 0
/// (unvoiced) is zero.
pub fn smooth_pitch_table(bins: usize, dim: usize) -> Mat {
    let half = (dim / 2).max(1);
    ndarray::Array2::from_shape_fn((bins, dim), |(b, i)| {
        if b == 0 {
            return 0.0;
        }
        let k = (i / 2) as f64 / half as f64;
        let w = std::f64::consts::TAU / (16.0 * 64f64.powf(k));
        let a = b as f64 * w;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Frame-to-phoneme index map for the given durations.
pub fn regulate_index(durations: &[usize]) -> Vec<usize> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect()
}

/// Repeats row `l` of `hidden` `durations[l]` times.
pub fn length_regulate(hidden: &Mat, durations: &[usize]) -> Result<Mat> {
    if durations.len() != hidden.nrows() {
        return Err(Error::LengthMismatch {
            stream: "durations",
            expected: hidden.nrows(),
            actual: durations.len(),
        });
    }
    Ok(hidden.select(Axis(0), &regulate_index(durations)))
}

/// Mean absolute error over all cells.
pub fn reconstruction_loss(predicted: &Mat, target: &Mat) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            predicted.dim(),
            target.dim()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("empty mel"));
    }
    let total: f64 = predicted
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Frame-level inputs of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticInputs {
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
    pub pitch_bins: Vec<usize>,
}

impl AcousticInputs {
    pub fn frames(&self) -> usize {
        self.pitch_bins.len()
    }
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub cfg: ModelConfig,
    phoneme_table: ParamId,
    pitch_table: ParamId,
    encoder: Vec<FftBlock>,
    spk_proj: Linear,
    hf_proj: Linear,
    decoder: Vec<FftBlock>,
    head: Linear,
}

impl AcousticModel {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden;
        let std = 1.0 / (d as f64).sqrt();
        let phoneme_table = store.add_normal("am.phoneme_table", cfg.n_phonemes, d, std, rng);
        let block = |store: &mut ParamStore, name: String, rng: &mut _| {
            FftBlock::new(
                store,
                &name,
                d,
                cfg.heads,
                cfg.filter,
                cfg.kernel,
                cfg.dropout,
                rng,
            )
        };
        let encoder = (0..cfg.encoder_blocks)
            .map(|i| block(store, format!("am.enc{i}"), rng))
            .collect();
        let pitch_table = store.add("am.pitch_table", smooth_pitch_table(cfg.pitch_bins, d));
        let spk_proj = Linear::new(store, "am.spk_proj", cfg.spk_dim, d, true, rng);
        let hf_proj = Linear::new(store, "am.hf_proj", cfg.hf_dim, d, true, rng);
        let decoder = (0..cfg.decoder_blocks)
            .map(|i| block(store, format!("am.dec{i}"), rng))
            .collect();
        let head = Linear::new(store, "am.head", d, cfg.n_mels, true, rng);
        Ok(AcousticModel {
            cfg: cfg.clone(),
            phoneme_table,
            pitch_table,
            encoder,
            spk_proj,
            hf_proj,
            decoder,
            head,
        })
    }

    pub fn check_inputs(&self, x: &AcousticInputs) -> Result<()> {
        if x.phonemes.is_empty() {
            return Err(Error::invalid("empty phoneme sequence"));
        }
        if let Some(&id) = x.phonemes.iter().find(|&&p| p >= self.cfg.n_phonemes) {
            return Err(Error::PhonemeOutOfRange {
                id,
                inventory: self.cfg.n_phonemes,
            });
        }
        if x.durations.len() != x.phonemes.len() {
            return Err(Error::LengthMismatch {
                stream: "durations",
                expected: x.phonemes.len(),
                actual: x.durations.len(),
            });
        }
        let t: usize = x.durations.iter().sum();
        if x.pitch_bins.len() != t {
            return Err(Error::LengthMismatch {
                stream: "pitch_bins",
                expected: t,
                actual: x.pitch_bins.len(),
            });
        }
        if t == 0 {
            return Err(Error::invalid("durations sum to zero frames"));
        }
        if let Some(&b) = x.pitch_bins.iter().find(|&&b| b >= self.cfg.pitch_bins) {
            return Err(Error::invalid(format!(
                "pitch bin {b} outside table of {}",
                self.cfg.pitch_bins
            )));
        }
        Ok(())
    }

    fn add_positions(&self, g: &mut Graph, x: Var) -> Var {
        if !self.cfg.positional {
            return x;
        }
        let (len, d) = g.shape(x);
        let pe = g.constant(sinusoid_positions(len, d));
        g.add(x, pe)
    }

    /// Phoneme encoder output `[L x d]`.
    pub fn encode_phonemes_graph(&self, g: &mut Graph, phonemes: &[usize]) -> Result<Var> {
        if phonemes.is_empty() {
            return Err(Error::invalid("empty phoneme sequence"));
        }
        if let Some(&id) = phonemes.iter().find(|&&p| p >= self.cfg.n_phonemes) {
            return Err(Error::PhonemeOutOfRange {
                id,
                inventory: self.cfg.n_phonemes,
            });
        }
        let table = g.param(self.phoneme_table);
        let mut x = g.gather_rows(table, phonemes.to_vec());
        x = self.add_positions(g, x);
        for b in &self.encoder {
            x = b.forward(g, x);
        }
        Ok(x)
    }

    pub fn encode_phonemes(&self, store: &ParamStore, phonemes: &[usize]) -> Result<Mat> {
        let mut g = Graph::new(store);
        let x = self.encode_phonemes_graph(&mut g, phonemes)?;
        Ok(g.value(x).clone())
    }

    /// Frame hidden states `h` after length regulation, pitch embedding and
    /// fixed-size speaker conditioning; these are the attention queries.
    pub fn frame_states(
        &self,
        g: &mut Graph,
        x: &AcousticInputs,
        spk: &SpeakerEmbedding,
    ) -> Result<Var> {
        self.check_inputs(x)?;
        if spk.len() != self.cfg.spk_dim {
            return Err(Error::LengthMismatch {
                stream: "speaker embedding",
                expected: self.cfg.spk_dim,
                actual: spk.len(),
            });
        }
        let enc = self.encode_phonemes_graph(g, &x.phonemes)?;
        let h = g.gather_rows(enc, regulate_index(&x.durations));
        let table = g.param(self.pitch_table);
        let p = g.gather_rows(table, x.pitch_bins.clone());
        let h = g.add(h, p);
        let s = g.constant(spk.to_row());
        let s = self.spk_proj.forward(g, s);
        Ok(g.add_row(h, s))
    }

    /// Adds projected high-fidelity embeddings when present, then decodes
    /// to a normalized mel `[T x n_mels]`.
    pub fn decode(&self, g: &mut Graph, h: Var, hf: Option<Var>) -> Result<Var> {
        let t = g.shape(h).0;
        let mut x = h;
        if let Some(hf) = hf {
            let (rows, cols) = g.shape(hf);
            if rows != t {
                return Err(Error::LengthMismatch {
                    stream: "hf_embeddings",
                    expected: t,
                    actual: rows,
                });
            }
            if cols != self.cfg.hf_dim {
                return Err(Error::Shape(format!(
                    "hf embeddings have width {cols}, expected {}",
                    self.cfg.hf_dim
                )));
            }
            let p = self.hf_proj.forward(g, hf);
            x = g.add(x, p);
        }
        x = self.add_positions(g, x);
        for b in &self.decoder {
            x = b.forward(g, x);
        }
        Ok(self.head.forward(g, x))
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: &AcousticInputs,
        spk: &SpeakerEmbedding,
        hf: Option<&Mat>,
    ) -> Result<Var> {
        let h = self.frame_states(g, x, spk)?;
        let hf = hf.map(|m| g.constant(m.clone()));
        self.decode(g, h, hf)
    }

    /// Evaluation-mode prediction.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &AcousticInputs,
        spk: &SpeakerEmbedding,
        hf: Option<&Mat>,
    ) -> Result<Mat> {
        let mut g = Graph::new(store);
        let y = self.forward_graph(&mut g, x, spk, hf)?;
        Ok(g.value(y).clone())
    }
}
