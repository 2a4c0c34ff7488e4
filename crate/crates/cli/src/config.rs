//! Run configuration: profile defaults, then a TOML file, then flags.

use std::fs;
use std::path::Path;

use mrsvs_core::pitch_shift::PitchShiftConfig;
use mrsvs_core::synth::SynthConfig;
use mrsvs_core::training::OptimizerConfig;
use mrsvs_core::vocoder::VocoderBackend;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SNAPSHOT_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainLoop {
    pub eval_every: u64,
    pub checkpoint_every: u64,
    /// Stop once training-set mel L1 falls below this.
    pub target_l1: Option<f64>,
    /// Vocode during evaluation to fill the f0 and speaker columns.
    pub audio_metrics: bool,
}

impl Default for TrainLoop {
    fn default() -> Self {
        TrainLoop {
            eval_every: 100,
            checkpoint_every: 500,
            target_l1: None,
            audio_metrics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderSettings {
    pub backend: String,
    pub iters: usize,
}

impl Default for VocoderSettings {
    fn default() -> Self {
        VocoderSettings {
            backend: "griffin-lim".into(),
            iters: 60,
        }
    }
}

impl VocoderSettings {
    pub fn backend(&self) -> CliResult<VocoderBackend> {
        let b: VocoderBackend = self
            .backend
            .parse()
            .map_err(|e: mrsvs_core::Error| CliError::usage(e.to_string()))?;
        if self.iters == 0 {
            return Err(CliError::usage("vocoder.iters must be at least 1"));
        }
        Ok(match b {
            VocoderBackend::GriffinLim { .. } => VocoderBackend::GriffinLim { iters: self.iters },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    /// Seeds model initialization, sampling and dropout.
    pub seed: u64,
    pub synth: SynthConfig,
    pub optimizer: OptimizerConfig,
    pub pitch_shift: PitchShiftConfig,
    pub train: TrainLoop,
    pub vocoder: VocoderSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_profile(Profile::Toy)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let n_phonemes = mrsvs_core::corpus::TOY_NOTE_SYMBOLS + 1;
        let (synth, optimizer) = match profile {
            Profile::Toy => (SynthConfig::toy(n_phonemes), OptimizerConfig::toy()),
            Profile::Paper => (SynthConfig::paper(n_phonemes), OptimizerConfig::default()),
        };
        RunConfig {
            profile,
            seed: 0,
            synth,
            optimizer,
            pitch_shift: PitchShiftConfig::default(),
            train: TrainLoop::default(),
            vocoder: VocoderSettings::default(),
        }
    }

    /// Profile defaults, overlaid by `file` and then by dotted-key
    /// `overrides`. Unknown keys are rejected.
    pub fn resolve(
        profile: Option<Profile>,
        file: Option<&Path>,
        overrides: &[(&str, Value)],
    ) -> CliResult<Self> {
        let file_value = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                let t: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?;
                Some(serde_json::to_value(t).expect("toml maps to json"))
            }
            None => None,
        };
        let from_file = file_value
            .as_ref()
            .and_then(|v| v.get("profile"))
            .map(|v| serde_json::from_value::<Profile>(v.clone()))
            .transpose()
            .map_err(|e| CliError::usage(format!("profile: {e}")))?;
        let profile = profile.or(from_file).unwrap_or(Profile::Toy);
        let mut base =
            serde_json::to_value(RunConfig::for_profile(profile)).expect("config serializes");
        if let Some(v) = &file_value {
            merge(&mut base, v, "")?;
        }
        base["profile"] = serde_json::to_value(profile).expect("profile serializes");
        for (key, value) in overrides {
            set_path(&mut base, key, value.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(base)
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.synth.init_seed = cfg.seed;
        cfg.optimizer.seed = cfg.seed;
        cfg.synth.features.validate().map_err(usage)?;
        cfg.synth.validate().map_err(usage)?;
        cfg.optimizer.validate().map_err(usage)?;
        cfg.pitch_shift.validate().map_err(usage)?;
        cfg.vocoder.backend()?;
        Ok(cfg)
    }

    /// Sorted-key JSON.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&v).expect("json")
    }

    pub fn snapshot(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        let p = dir.join(SNAPSHOT_FILE);
        fs::write(&p, self.canonical_json() + "\n")
            .map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))
    }
}

fn usage(e: mrsvs_core::Error) -> CliError {
    CliError::usage(e.to_string())
}

fn merge(dst: &mut Value, src: &Value, prefix: &str) -> CliResult<()> {
    let Some(map) = src.as_object() else {
        *dst = src.clone();
        return Ok(());
    };
    for (k, v) in map {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let slot = dst
            .as_object_mut()
            .and_then(|o| o.get_mut(k))
            .ok_or_else(|| CliError::usage(format!("unknown config key {path}")))?;
        if v.is_object() && slot.is_object() {
            merge(slot, v, &path)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

fn set_path(dst: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = dst;
    for part in key.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::usage(format!("unknown config key {key}")))?;
    }
    *cur = value;
    Ok(())
}
