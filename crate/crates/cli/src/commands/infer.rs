use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mrsvs_core::corpus::{
    load_alignment, CorpusManifest, PhonemeAlignment, PhonemeInventory, MANIFEST_FILE, PHONES_FILE,
};
use mrsvs_core::exec::Exec;
use mrsvs_core::pitch_shift::reference_stats;
use mrsvs_core::signal::{extract_f0_with, extract_mel_with, voiced_mean, PitchContour};
use mrsvs_core::synth::{ReferenceClip, SynthesisOutput, Synthesizer, PARAMS_FILE};
use mrsvs_core::training::Trainer;
use mrsvs_core::wav::{read_wav, write_wav};
use serde_json::{json, Value};

use super::{create_dir, exec, file_digest, io_err, say, write_json, ConfigArgs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::plot;
use crate::score::parse_score;

pub const SUMMARY_FILE: &str = "summary.json";

/// Where the references come from and how many to use.
#[derive(Debug, Clone, Args)]
pub struct RefArgs {
    /// A corpus directory (features from its manifest) or a directory of wavs.
    #[arg(long)]
    pub refs: PathBuf,
    /// Only use references whose speaker (or file stem) starts with this.
    #[arg(long)]
    pub ref_speaker: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub max_refs: usize,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// 16-bit mono wav of the source singer.
    #[arg(long)]
    pub source_audio: PathBuf,
    /// Alignment of the source; defaults to `../align/<stem>.txt` next to it.
    #[arg(long)]
    pub align: Option<PathBuf>,
    /// Phoneme inventory; defaults to the one stored with the checkpoint.
    #[arg(long)]
    pub phones: Option<PathBuf>,
    #[command(flatten)]
    pub refs: RefArgs,
    /// A `step_<N>` directory or a run directory (latest step is used).
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub no_pitch_shift: bool,
    #[arg(long, default_value = "convert_out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Score file: one `label frames f0` segment per line.
    #[arg(long)]
    pub score: PathBuf,
    #[arg(long)]
    pub phones: Option<PathBuf>,
    #[command(flatten)]
    pub refs: RefArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Global pitch offset in semitones.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch_offset: f64,
    #[arg(long, default_value = "synth_out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// Step directory and run root for `--ckpt`.
pub fn resolve_checkpoint(path: &Path) -> CliResult<(PathBuf, PathBuf)> {
    if path.join(PARAMS_FILE).exists() {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok((path.to_path_buf(), root));
    }
    match Trainer::latest_checkpoint(path) {
        Some(step) => Ok((step, path.to_path_buf())),
        None => Err(CliError::usage(format!(
            "no checkpoint found at {}",
            path.display()
        ))),
    }
}

fn inventory(explicit: Option<&Path>, candidates: &[PathBuf]) -> CliResult<PhonemeInventory> {
    if let Some(p) = explicit {
        return Ok(PhonemeInventory::read(p)?);
    }
    match candidates.iter().find(|p| p.exists()) {
        Some(p) => Ok(PhonemeInventory::read(p)?),
        None => Err(CliError::usage("no phoneme inventory found; pass --phones")),
    }
}

fn load_refs(a: &RefArgs, synth: &Synthesizer) -> CliResult<Vec<ReferenceClip>> {
    let fc = &synth.cfg.features;
    let keep = |name: &str| a.ref_speaker.as_deref().is_none_or(|p| name.starts_with(p));
    let mut clips = Vec::new();
    if a.refs.join(MANIFEST_FILE).exists() {
        let m = CorpusManifest::read(&a.refs)?;
        for e in m
            .entries
            .iter()
            .filter(|e| keep(&e.speaker))
            .take(a.max_refs)
        {
            let u = m.load_utterance(e, fc, false)?;
            clips.push(ReferenceClip {
                id: u.id,
                mel: fc.normalize(&u.mel),
                f0: u.f0,
            });
        }
    } else {
        let mut wavs: Vec<PathBuf> = fs::read_dir(&a.refs)
            .map_err(|e| io_err(&a.refs, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .filter(|p| p.file_stem().and_then(|s| s.to_str()).is_some_and(keep))
            .collect();
        wavs.sort();
        let wavs = &wavs[..wavs.len().min(a.max_refs)];
        clips = exec().try_map(wavs, |p| -> mrsvs_core::Result<ReferenceClip> {
            let audio = read_wav(p, fc.sample_rate)?;
            Ok(ReferenceClip {
                id: p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string(),
                mel: fc.normalize(&extract_mel_with(&audio, fc, Exec::Sequential)?),
                f0: extract_f0_with(&audio, fc, Exec::Sequential)?,
            })
        })?;
    }
    if clips.is_empty() {
        return Err(CliError::usage(format!(
            "no reference clips found in {}",
            a.refs.display()
        )));
    }
    let f0: Vec<PitchContour> = clips.iter().map(|c| c.f0.clone()).collect();
    if reference_stats(&f0).voiced_mean.is_none() {
        return Err(CliError::runtime("references have no voiced frames"));
    }
    Ok(clips)
}

fn mean_or_null(f0: &[f64]) -> Value {
    voiced_mean(f0).map(Value::from).unwrap_or(Value::Null)
}

fn fmt_mean(f0: &[f64]) -> String {
    voiced_mean(f0)
        .map(|m| format!("{m:.2} Hz"))
        .unwrap_or_else(|_| "none".into())
}

/// Writes the waveform and summary; returns the wav digest.
fn write_outputs(
    out_dir: &Path,
    wav_name: &str,
    synth: &Synthesizer,
    out: &SynthesisOutput,
    mut summary: Value,
) -> CliResult<String> {
    let wav = out_dir.join(wav_name);
    write_wav(&wav, &out.waveform, synth.cfg.features.sample_rate)?;
    let digest = file_digest(&wav)?;
    let extra = json!({
        "wav": wav_name,
        "wav_sha256": digest,
        "frames": out.mel.nrows(),
        "input_f0": out.input_f0.values,
        "shifted_f0": out.shifted_f0.values,
        "pitch_bins": out.pitch_bins,
        "reference_voiced_mean": out.reference_mean,
    });
    summary
        .as_object_mut()
        .expect("object")
        .extend(extra.as_object().expect("object").clone());
    write_json(&out_dir.join(super::infer::SUMMARY_FILE), &summary)?;
    Ok(digest)
}

fn prepare(
    cfg_args: &ConfigArgs,
    extra: &[(&str, Value)],
    ckpt: &Path,
) -> CliResult<(RunConfig, Synthesizer, PathBuf)> {
    let mut cfg = cfg_args.resolve(None, extra)?;
    let (step, root) = resolve_checkpoint(ckpt)?;
    let synth = Synthesizer::load(&step.join(PARAMS_FILE))?;
    cfg.synth = synth.cfg.clone();
    Ok((cfg, synth, root))
}

fn fit_length(f0: PitchContour, alignment: &PhonemeAlignment) -> CliResult<PitchContour> {
    let want = alignment.total_frames();
    let have = f0.len();
    if have.abs_diff(want) > 2 {
        return Err(CliError::runtime(format!(
            "alignment covers {want} frames but the audio has {have}"
        )));
    }
    let mut v = f0.values;
    v.resize(want, 0.0);
    Ok(PitchContour::new(v))
}

pub fn convert(a: &ConvertArgs) -> CliResult<()> {
    let extra: Vec<(&str, Value)> = if a.no_pitch_shift {
        vec![("pitch_shift.enabled", Value::Bool(false))]
    } else {
        vec![]
    };
    let (cfg, synth, root) = prepare(&a.cfg, &extra, &a.ckpt)?;
    let fc = &synth.cfg.features;
    let source_dir = a.source_audio.parent().unwrap_or(Path::new("."));
    let corpus_root = source_dir.parent().unwrap_or(Path::new("."));
    let inv = inventory(
        a.phones.as_deref(),
        &[root.join(PHONES_FILE), corpus_root.join(PHONES_FILE)],
    )?;
    let stem = a
        .source_audio
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::usage("source audio needs a file name"))?;
    let align_path = a
        .align
        .clone()
        .unwrap_or_else(|| corpus_root.join("align").join(format!("{stem}.txt")));
    if !align_path.exists() {
        return Err(CliError::usage(format!(
            "no alignment for the source at {}; pass --align",
            align_path.display()
        )));
    }
    let alignment = load_alignment(&align_path, fc.hop_seconds(), &inv)?;
    let audio = read_wav(&a.source_audio, fc.sample_rate)?;
    let src_f0 = fit_length(extract_f0_with(&audio, fc, exec())?, &alignment)?;
    let refs = load_refs(&a.refs, &synth)?;

    let out = synth.convert(
        &alignment,
        &src_f0,
        &refs,
        &cfg.pitch_shift,
        cfg.vocoder.backend()?,
        exec(),
    )?;
    create_dir(&a.out)?;
    cfg.snapshot(&a.out)?;
    plot::conversion(
        &a.out.join("convert.png"),
        &out.input_f0.values,
        &out.shifted_f0.values,
        &out.mel,
    )?;
    let summary = json!({
        "source": a.source_audio.to_string_lossy(),
        "references": refs.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
        "pitch_shift": cfg.pitch_shift.enabled,
        "delta_hz": out.delta,
        "source_voiced_mean": mean_or_null(&out.input_f0.values),
        "shifted_voiced_mean": mean_or_null(&out.shifted_f0.values),
        "plot": "convert.png",
    });
    let digest = write_outputs(&a.out, "converted.wav", &synth, &out, summary)?;
    say(format!(
        "source voiced mean    {}",
        fmt_mean(&out.input_f0.values)
    ));
    say(format!(
        "reference voiced mean {}",
        out.reference_mean
            .map(|m| format!("{m:.2} Hz"))
            .unwrap_or_else(|| "none".into())
    ));
    say(format!(
        "shifted voiced mean   {}",
        fmt_mean(&out.shifted_f0.values)
    ));
    say(format!("shift delta           {:.2} Hz", out.delta));
    say(format!(
        "wrote {} (sha256 {digest})",
        a.out.join("converted.wav").display()
    ));
    Ok(())
}

pub fn synthesize(a: &SynthesizeArgs) -> CliResult<()> {
    let (cfg, synth, root) = prepare(&a.cfg, &[], &a.ckpt)?;
    if !a.pitch_offset.is_finite() {
        return Err(CliError::usage("--pitch-offset must be finite"));
    }
    let inv = inventory(a.phones.as_deref(), &[root.join(PHONES_FILE)])?;
    let text = fs::read_to_string(&a.score)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.score.display())))?;
    let score = parse_score(&text, &inv)?;
    let refs = load_refs(&a.refs, &synth)?;

    let out = synth.synthesize(
        &score.alignment,
        &score.f0,
        a.pitch_offset,
        &refs,
        cfg.vocoder.backend()?,
        exec(),
    )?;
    create_dir(&a.out)?;
    cfg.snapshot(&a.out)?;
    let plot_path = a.out.join("mel.png");
    plot::mel_with_f0(
        &plot_path,
        &out.mel,
        &out.shifted_f0.values,
        synth.cfg.features.fmax,
    )?;
    let summary = json!({
        "score": a.score.to_string_lossy(),
        "references": refs.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
        "pitch_offset_semitones": a.pitch_offset,
        "plot": "mel.png",
        "plot_sha256": file_digest(&plot_path)?,
    });
    let digest = write_outputs(&a.out, "synth.wav", &synth, &out, summary)?;
    say(format!(
        "pitch offset {:+} semitones, {} frames",
        a.pitch_offset,
        out.mel.nrows()
    ));
    say(format!(
        "input voiced mean {}",
        fmt_mean(&out.shifted_f0.values)
    ));
    say(format!(
        "wrote {} (sha256 {digest})",
        a.out.join("synth.wav").display()
    ));
    Ok(())
}
