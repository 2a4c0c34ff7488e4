use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mrsvs_core::corpus::{
    corpus_digest, generate_toy_corpus_with, load_alignment, validate_corpus, CorpusManifest,
    ManifestEntry, PhonemeInventory, Utterance, MANIFEST_FILE, PHONES_FILE,
};
use mrsvs_core::exec::Exec;
use mrsvs_core::signal::{extract_f0_with, extract_mel_with, FeatureConfig};
use mrsvs_core::wav::read_wav;

use super::{exec, io_err, say, ConfigArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct MakeToyCorpusArgs {
    #[arg(long, default_value = "toy_corpus")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 4)]
    pub utts: usize,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn is_non_empty_dir(p: &Path) -> bool {
    fs::read_dir(p)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

pub fn make_toy_corpus(a: &MakeToyCorpusArgs) -> CliResult<()> {
    if a.speakers == 0 || a.utts == 0 {
        return Err(CliError::usage("--speakers and --utts must be at least 1"));
    }
    let cfg = a.cfg.resolve(None, &[])?;
    if a.out.is_file() {
        return Err(CliError::usage(format!("{} is a file", a.out.display())));
    }
    if is_non_empty_dir(&a.out) {
        if !a.force {
            return Err(CliError::usage(format!(
                "{} exists and is not empty; pass --force to replace it",
                a.out.display()
            )));
        }
        fs::remove_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    }
    let m = generate_toy_corpus_with(
        &a.out,
        a.speakers,
        a.utts,
        cfg.seed,
        &cfg.synth.features,
        exec(),
    )?;
    cfg.snapshot(&a.out)?;
    say(format!(
        "wrote {} utterances from {} speakers to {}",
        m.entries.len(),
        a.speakers,
        a.out.display()
    ));
    say(format!("digest {}", corpus_digest(&a.out)?));
    Ok(())
}

/// Manifest entries to extract: those of an existing manifest, or one per
/// `wav/<id>.wav` with `align/<id>.txt`, speaker taken from the id prefix.
fn preprocess_entries(root: &Path) -> CliResult<(PhonemeInventory, Vec<ManifestEntry>)> {
    if root.join(MANIFEST_FILE).exists() {
        let m = CorpusManifest::read(root)?;
        return Ok((m.inventory, m.entries));
    }
    let phones = root.join(PHONES_FILE);
    if !phones.exists() {
        return Err(CliError::usage(format!(
            "{} has neither {MANIFEST_FILE} nor {PHONES_FILE}",
            root.display()
        )));
    }
    let inventory = PhonemeInventory::read(&phones)?;
    let wav_dir = root.join("wav");
    let mut stems: Vec<String> = fs::read_dir(&wav_dir)
        .map_err(|e| io_err(&wav_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "wav").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    stems.sort();
    let entries = stems
        .into_iter()
        .map(|id| ManifestEntry {
            speaker: id.split('_').next().unwrap_or(&id).to_string(),
            mel: PathBuf::from(format!("mel/{id}.mrsv")),
            f0: PathBuf::from(format!("f0/{id}.mrsv")),
            align: PathBuf::from(format!("align/{id}.txt")),
            wav: Some(PathBuf::from(format!("wav/{id}.wav"))),
            id,
        })
        .collect();
    Ok((inventory, entries))
}

fn extract(
    m: &CorpusManifest,
    e: &ManifestEntry,
    wav: &Path,
    cfg: &FeatureConfig,
) -> mrsvs_core::Result<ManifestEntry> {
    let audio = read_wav(&m.root.join(wav), cfg.sample_rate)?;
    let mel = extract_mel_with(&audio, cfg, Exec::Sequential)?;
    let f0 = extract_f0_with(&audio, cfg, Exec::Sequential)?;
    let alignment = load_alignment(&m.root.join(&e.align), cfg.hop_seconds(), &m.inventory)?;
    let utt = Utterance {
        id: e.id.clone(),
        speaker_id: e.speaker.clone(),
        alignment,
        f0,
        mel,
        waveform: None,
    };
    utt.check(cfg)?;
    let mut saved = m.save_utterance(&utt, cfg)?;
    saved.wav = Some(wav.to_path_buf());
    Ok(saved)
}

pub fn preprocess(a: &PreprocessArgs) -> CliResult<()> {
    let cfg = a.cfg.resolve(None, &[])?;
    let fc = &cfg.synth.features;
    let (inventory, entries) = preprocess_entries(&a.corpus)?;
    let mut manifest = CorpusManifest::new(&a.corpus, fc, inventory);
    manifest.entries = entries;
    let m = &manifest;
    let results = exec().map(&manifest.entries, |e| match &e.wav {
        None => Ok(None),
        Some(w) => extract(m, e, w, fc).map(Some),
    });
    let mut failures = Vec::new();
    let mut skipped = 0;
    let mut entries = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(Some(saved)) => entries.push(saved),
            Ok(None) => {
                skipped += 1;
                entries.push(e.clone());
            }
            Err(err) => {
                for p in [&e.mel, &e.f0] {
                    let _ = fs::remove_file(a.corpus.join(p));
                }
                failures.push(format!("{}: {err}", e.id));
                entries.push(e.clone());
            }
        }
    }
    manifest.entries = entries;
    manifest.write()?;
    cfg.snapshot(&a.corpus)?;
    let done = manifest.entries.len() - failures.len() - skipped;
    say(format!(
        "extracted {done} utterances, {skipped} without audio kept as is"
    ));
    if !failures.is_empty() {
        for f in &failures {
            say(format!("FAILED {f}"));
        }
        return Err(CliError::runtime(format!(
            "{} of {} files failed",
            failures.len(),
            manifest.entries.len()
        )));
    }
    say(format!("digest {}", corpus_digest(&a.corpus)?));
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let cfg = a.cfg.resolve(None, &[])?;
    let m = CorpusManifest::read(&a.corpus)?;
    let report = validate_corpus(&m, &cfg.synth.features);
    if let Some(msg) = &report.config_mismatch {
        say(format!("FAILED feature config: {msg}"));
    }
    for e in report.failures() {
        say(format!(
            "FAILED {}: {}",
            e.id,
            e.failure.as_deref().unwrap_or("")
        ));
    }
    let bad = report.failures().count();
    say(format!(
        "{} utterances, {} failed",
        report.entries.len(),
        bad
    ));
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "corpus {} failed validation",
            a.corpus.display()
        )))
    }
}
