//! The full synthesizer: acoustic model, both speaker encoders and the
//! vocoder front end over one parameter store, plus the conversion and
//! score-driven synthesis paths.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::acoustic_model::{quantize_pitch, AcousticInputs, AcousticModel, ModelConfig};
use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::corpus::PhonemeAlignment;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mrsv::{read_container, write_container};
use crate::pitch_shift::{reference_stats, shift_with_delta, PitchShiftConfig};
use crate::signal::{FeatureConfig, PitchContour};
use crate::speaker_encoders::{
    fixed_embed, FixedBackend, MultiRefConfig, MultiRefEncoder, ReferenceMel, SpeakerEmbedding,
    StatsProjector,
};
use crate::vocoder::{
    build_conditioning, vocode, VocoderBackend, VocoderConditioning, VocoderFrontEnd,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub multi_ref: MultiRefConfig,
    /// Feed high-fidelity embeddings to the decoder.
    pub use_multi_ref: bool,
    pub init_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::paper(crate::corpus::TOY_NOTE_SYMBOLS + 1)
    }
}

impl SynthConfig {
    pub fn paper(n_phonemes: usize) -> Self {
        SynthConfig {
            features: FeatureConfig::default(),
            model: ModelConfig::paper(n_phonemes),
            multi_ref: MultiRefConfig::default(),
            use_multi_ref: true,
            init_seed: 0,
        }
    }

    pub fn toy(n_phonemes: usize) -> Self {
        SynthConfig {
            model: ModelConfig::toy(n_phonemes),
            multi_ref: MultiRefConfig {
                conv_channels: 64,
                lstm_hidden: 32,
                d_m: 64,
                heads: 4,
                ..MultiRefConfig::default()
            },
            ..SynthConfig::paper(n_phonemes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.multi_ref.validate()?;
        if self.model.hf_dim != self.multi_ref.d_m {
            return Err(Error::invalid(format!(
                "model hf_dim {} differs from multi-reference d_m {}",
                self.model.hf_dim, self.multi_ref.d_m
            )));
        }
        if self.model.n_mels != self.features.n_mels {
            return Err(Error::invalid("model and feature n_mels differ"));
        }
        Ok(())
    }
}

/// A reference clip of the target speaker: normalized mel and f0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClip {
    pub id: String,
    pub mel: Mat,
    pub f0: PitchContour,
}

#[derive(Debug, Clone)]
pub struct Synthesizer {
    pub cfg: SynthConfig,
    pub store: ParamStore,
    pub acoustic: AcousticModel,
    pub multi_ref: MultiRefEncoder,
    pub fixed_projection: ParamId,
    vocoder_ids: [ParamId; 3],
}

/// Everything produced by one conversion or synthesis call.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub input_f0: PitchContour,
    pub shifted_f0: PitchContour,
    pub delta: f64,
    pub reference_mean: Option<f64>,
    pub pitch_bins: Vec<usize>,
    /// Normalized predicted mel.
    pub mel: Mat,
    pub conditioning: VocoderConditioning,
    pub waveform: Vec<f64>,
}

pub const PARAMS_FILE: &str = "params.mrsv";

impl Synthesizer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut store = ParamStore::new();
        let acoustic = AcousticModel::new(&mut store, &cfg.model, &mut rng)?;
        let multi_ref = MultiRefEncoder::new(
            &mut store,
            "mr",
            &cfg.multi_ref,
            cfg.features.n_mels,
            cfg.model.hidden,
            &mut rng,
        )?;
        let fixed_projection = store.add_frozen(
            "fixed.projection",
            StatsProjector::new(cfg.features.n_mels)
                .projection()
                .clone(),
        );
        let front = VocoderFrontEnd::untrained(cfg.model.pitch_bins, cfg.features.n_mels);
        let vocoder_ids = [
            store.add_frozen("vocoder.pitch_table", front.table),
            store.add_frozen("vocoder.fuse", front.fuse),
            store.add_frozen("vocoder.bias", front.bias),
        ];
        Ok(Synthesizer {
            cfg: cfg.clone(),
            store,
            acoustic,
            multi_ref,
            fixed_projection,
            vocoder_ids,
        })
    }

    pub fn fixed_backend(&self) -> FixedBackend {
        FixedBackend::BuiltinStats(
            StatsProjector::from_projection(self.store.get(self.fixed_projection).clone())
                .expect("stored projection"),
        )
    }

    pub fn vocoder_front_end(&self) -> VocoderFrontEnd {
        let [t, f, b] = self.vocoder_ids;
        VocoderFrontEnd::new(
            self.store.get(t).clone(),
            self.store.get(f).clone(),
            self.store.get(b).clone(),
        )
        .expect("stored front end")
    }

    pub fn quantize(&self, f0: &PitchContour) -> Vec<usize> {
        let m = &self.cfg.model;
        quantize_pitch(f0, m.f0_floor, m.f0_ceil, m.pitch_bins)
    }

    pub fn inputs(&self, alignment: &PhonemeAlignment, f0: &PitchContour) -> AcousticInputs {
        AcousticInputs {
            phonemes: alignment.phonemes.clone(),
            durations: alignment.durations.clone(),
            pitch_bins: self.quantize(f0),
        }
    }

    /// Normalized mel prediction inside `g`. `refs` are normalized mels fed
    /// to the multi-reference encoder and ignored when it is disabled.
    pub fn predict_graph(
        &self,
        g: &mut Graph,
        inputs: &AcousticInputs,
        spk: &SpeakerEmbedding,
        refs: &[Mat],
    ) -> Result<Var> {
        let h = self.acoustic.frame_states(g, inputs, spk)?;
        let hf = if self.cfg.use_multi_ref {
            let (s, _) = self.multi_ref.encode_graph(g, refs)?;
            let (e, _, _) = self.multi_ref.attend_graph(g, h, s)?;
            Some(e)
        } else {
            None
        };
        self.acoustic.decode(g, h, hf)
    }

    pub fn predict(
        &self,
        inputs: &AcousticInputs,
        spk: &SpeakerEmbedding,
        refs: &[Mat],
    ) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let y = self.predict_graph(&mut g, inputs, spk, refs)?;
        Ok(g.value(y).clone())
    }

    pub fn speaker_embedding(&self, refs: &[ReferenceClip]) -> Result<SpeakerEmbedding> {
        let mels: Vec<ReferenceMel> = refs
            .iter()
            .map(|r| ReferenceMel {
                id: &r.id,
                mel: &r.mel,
            })
            .collect();
        fixed_embed(&mels, &self.fixed_backend())
    }

    /// Shifts `source_f0` toward the references (per `shift`), then
    /// synthesizes and vocodes in the target voice.
    pub fn convert(
        &self,
        alignment: &PhonemeAlignment,
        source_f0: &PitchContour,
        refs: &[ReferenceClip],
        shift: &PitchShiftConfig,
        backend: VocoderBackend,
        exec: Exec,
    ) -> Result<SynthesisOutput> {
        if refs.is_empty() {
            return Err(Error::invalid("no reference clips"));
        }
        let ref_f0: Vec<PitchContour> = refs.iter().map(|r| r.f0.clone()).collect();
        let reference_mean = reference_stats(&ref_f0).voiced_mean;
        let shifted = shift_with_delta(source_f0, &ref_f0, shift)?;
        self.render(
            alignment,
            source_f0.clone(),
            shifted.contour,
            shifted.delta,
            reference_mean,
            refs,
            backend,
            exec,
        )
    }

    /// Synthesizes from a given contour after a global offset in semitones.
    pub fn synthesize(
        &self,
        alignment: &PhonemeAlignment,
        f0: &PitchContour,
        semitones: f64,
        refs: &[ReferenceClip],
        backend: VocoderBackend,
        exec: Exec,
    ) -> Result<SynthesisOutput> {
        let ratio = 2f64.powf(semitones / 12.0);
        let moved = PitchContour::new(f0.values.iter().map(|&v| v * ratio).collect());
        let ref_f0: Vec<PitchContour> = refs.iter().map(|r| r.f0.clone()).collect();
        let reference_mean = reference_stats(&ref_f0).voiced_mean;
        self.render(
            alignment,
            f0.clone(),
            moved,
            0.0,
            reference_mean,
            refs,
            backend,
            exec,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn render(
        &self,
        alignment: &PhonemeAlignment,
        input_f0: PitchContour,
        shifted_f0: PitchContour,
        delta: f64,
        reference_mean: Option<f64>,
        refs: &[ReferenceClip],
        backend: VocoderBackend,
        exec: Exec,
    ) -> Result<SynthesisOutput> {
        if shifted_f0.len() != alignment.total_frames() {
            return Err(Error::LengthMismatch {
                stream: "f0",
                expected: alignment.total_frames(),
                actual: shifted_f0.len(),
            });
        }
        let spk = self.speaker_embedding(refs)?;
        let inputs = self.inputs(alignment, &shifted_f0);
        let mels: Vec<Mat> = refs.iter().map(|r| r.mel.clone()).collect();
        let mel = self
            .predict(&inputs, &spk, &mels)?
            .mapv(|v| v.clamp(0.0, 1.0));
        let conditioning = build_conditioning(&mel, &inputs.pitch_bins, &self.vocoder_front_end())?;
        let waveform = vocode(&conditioning, backend, &self.cfg.features, exec)?;
        Ok(SynthesisOutput {
            input_f0,
            shifted_f0,
            delta,
            reference_mean,
            pitch_bins: inputs.pitch_bins,
            mel,
            conditioning,
            waveform,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({ "synth_config": self.cfg });
        write_container(path, &self.store.to_container(meta))
    }

    /// Rebuilds the model from the stored config and loads every tensor.
    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        let cfg: SynthConfig =
            serde_json::from_value(c.meta.get("synth_config").cloned().unwrap_or_default())
                .map_err(|e| Error::format("checkpoint", format!("config header: {e}")))?;
        let mut s = Synthesizer::new(&cfg)?;
        s.store.load_container(&c)?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, CorpusManifest};

    fn small(n_phonemes: usize) -> SynthConfig {
        let mut c = SynthConfig::toy(n_phonemes);
        c.model.hidden = 16;
        c.model.filter = 16;
        c.model.hf_dim = 8;
        c.multi_ref = MultiRefConfig {
            conv_channels: 8,
            lstm_hidden: 4,
            d_m: 8,
            heads: 2,
            ..MultiRefConfig::default()
        };
        c
    }

    fn clips(m: &CorpusManifest, cfg: &FeatureConfig, ids: &[usize]) -> Vec<ReferenceClip> {
        ids.iter()
            .map(|&i| {
                let u = m.load_utterance(&m.entries[i], cfg, false).unwrap();
                ReferenceClip {
                    id: u.id.clone(),
                    mel: cfg.normalize(&u.mel),
                    f0: u.f0,
                }
            })
            .collect()
    }

    #[test]
    fn configs_validate_and_profiles_differ() {
        assert!(SynthConfig::paper(9).validate().is_ok());
        assert!(SynthConfig::toy(9).validate().is_ok());
        let mut bad = SynthConfig::toy(9);
        bad.model.hf_dim = 3;
        assert!(bad.validate().is_err());
        assert_eq!(SynthConfig::paper(9).model.filter, 1024);
    }

    #[test]
    fn checkpoint_round_trip_and_conversion_contract() {
        let dir = tempfile::tempdir().unwrap();
        let fc = FeatureConfig::default();
        let m = generate_toy_corpus(&dir.path().join("c"), 2, 2, 5).unwrap();
        let synth = Synthesizer::new(&small(m.inventory.len())).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        synth.save(&path).unwrap();
        let back = Synthesizer::load(&path).unwrap();
        assert_eq!(back.cfg, synth.cfg);

        let src = m.load_utterance(&m.entries[0], &fc, false).unwrap();
        let refs = clips(&m, &fc, &[2, 3]);
        let backend = VocoderBackend::GriffinLim { iters: 2 };
        let shift = PitchShiftConfig::default();
        let a = synth
            .convert(
                &src.alignment,
                &src.f0,
                &refs,
                &shift,
                backend,
                Exec::Sequential,
            )
            .unwrap();
        let b = back
            .convert(
                &src.alignment,
                &src.f0,
                &refs,
                &shift,
                backend,
                Exec::default(),
            )
            .unwrap();
        assert_eq!(a.waveform, b.waveform);
        assert_eq!(a.mel.dim(), (src.frames(), 80));
        let shifted_mean = crate::signal::voiced_mean(&a.shifted_f0.values).unwrap();
        assert!((shifted_mean - a.reference_mean.unwrap()).abs() < 1e-6);

        let off = PitchShiftConfig {
            enabled: false,
            ..shift
        };
        let c = synth
            .convert(
                &src.alignment,
                &src.f0,
                &refs,
                &off,
                backend,
                Exec::default(),
            )
            .unwrap();
        let d = synth
            .synthesize(
                &src.alignment,
                &src.f0,
                0.0,
                &refs,
                backend,
                Exec::default(),
            )
            .unwrap();
        assert_eq!(c.delta, 0.0);
        assert_eq!(c.waveform, d.waveform);

        let silent = vec![ReferenceClip {
            f0: PitchContour::new(vec![0.0; 10]),
            ..refs[0].clone()
        }];
        assert!(matches!(
            synth.convert(
                &src.alignment,
                &src.f0,
                &silent,
                &shift,
                backend,
                Exec::default()
            ),
            Err(Error::NoVoicedFrames)
        ));
    }

    #[test]
    fn frozen_parts_are_not_trainable() {
        let s = Synthesizer::new(&small(9)).unwrap();
        assert!(!s.store.is_trainable(s.fixed_projection));
        assert_eq!(s.fixed_backend(), FixedBackend::builtin(80));
        assert_eq!(s.vocoder_front_end(), VocoderFrontEnd::untrained(256, 80));
    }
}
