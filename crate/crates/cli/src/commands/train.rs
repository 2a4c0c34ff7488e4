use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use mrsvs_core::corpus::{CorpusManifest, PHONES_FILE};
use mrsvs_core::synth::Synthesizer;
use mrsvs_core::training::{evaluate_with, EvalOptions, TrainSet, Trainer, METRICS_HEADER};
use serde_json::Value;

use super::{exec, io_err, say, ConfigArgs};
use crate::config::Profile;
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Continue from the latest checkpoint under --out.
    #[arg(long)]
    pub resume: bool,
    /// Run directory for checkpoints and metrics.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Total optimizer steps, counted from the start of the run.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn append_metrics(path: &Path, row: &str) -> CliResult<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}").map_err(|e| io_err(path, e))?;
    }
    writeln!(f, "{row}").map_err(|e| io_err(path, e))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let manifest = CorpusManifest::read(&a.corpus)?;
    let mut extra: Vec<(&str, Value)> = vec![(
        "synth.model.n_phonemes",
        Value::from(manifest.inventory.len()),
    )];
    if let Some(n) = a.max_steps {
        extra.push(("optimizer.max_steps", Value::from(n)));
    }
    let mut cfg = a.cfg.resolve(a.profile, &extra)?;
    if manifest.feature_digest != cfg.synth.features.digest() {
        return Err(CliError::usage(format!(
            "corpus features were extracted with config {}, this run uses {}; rerun preprocess",
            manifest.feature_digest,
            cfg.synth.features.digest()
        )));
    }

    let mut trainer = if a.resume {
        let Some(dir) = Trainer::latest_checkpoint(&a.out) else {
            return Err(CliError::usage(format!(
                "no checkpoint to resume under {}",
                a.out.display()
            )));
        };
        let mut t = Trainer::load_checkpoint(&dir)?;
        say(format!(
            "resuming from {} at step {}",
            dir.display(),
            t.step
        ));
        cfg.synth = t.synth.cfg.clone();
        let max_steps = cfg.optimizer.max_steps;
        cfg.optimizer = t.cfg.clone();
        cfg.optimizer.max_steps = max_steps;
        t.cfg.max_steps = max_steps;
        cfg.seed = t.cfg.seed;
        t
    } else {
        if Trainer::latest_checkpoint(&a.out).is_some() {
            return Err(CliError::usage(format!(
                "{} already holds checkpoints; pass --resume or choose another --out",
                a.out.display()
            )));
        }
        let stale = a.out.join(METRICS_FILE);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| io_err(&stale, e))?;
        }
        Trainer::new(Synthesizer::new(&cfg.synth)?, &cfg.optimizer)?
    };
    say("resolved config:");
    say(cfg.canonical_json());
    cfg.snapshot(&a.out)?;
    let phones = a.corpus.join(PHONES_FILE);
    fs::copy(&phones, a.out.join(PHONES_FILE)).map_err(|e| io_err(&phones, e))?;

    let set = TrainSet::from_manifest(&trainer.synth, &manifest)?;
    let opts = EvalOptions {
        backend: cfg.vocoder.backend()?,
        audio_metrics: cfg.train.audio_metrics,
        n_refs: cfg.optimizer.n_refs,
    };
    let metrics_path = a.out.join(METRICS_FILE);
    let eval_row = |t: &mut Trainer| -> CliResult<f64> {
        let m = evaluate_with(&t.synth, &set, &opts, exec())?;
        append_metrics(&metrics_path, &m.csv_row(t.step))?;
        t.best_val = Some(t.best_val.map_or(m.mel_l1, |b| b.min(m.mel_l1)));
        say(format!("step {} {m}", t.step));
        Ok(m.mel_l1)
    };
    if trainer.step == 0 {
        eval_row(&mut trainer)?;
    }

    let max = cfg.optimizer.max_steps;
    let started = Instant::now();
    let mut last_saved = None;
    while trainer.step < max {
        let batch = trainer.next_batch(&set)?;
        let loss = trainer.train_step(&set, &batch, exec())?;
        let s = trainer.step;
        let mut stop = false;
        if s % cfg.train.eval_every.max(1) == 0 || s == max {
            say(format!(
                "step {s} loss {loss:.4} ({:.1}s)",
                started.elapsed().as_secs_f64()
            ));
            let l1 = eval_row(&mut trainer)?;
            stop = cfg.train.target_l1.is_some_and(|t| l1 < t);
        }
        if s % cfg.train.checkpoint_every.max(1) == 0 {
            trainer.save_checkpoint(&a.out)?;
            last_saved = Some(s);
        }
        if stop {
            say(format!("reached target mel_L1 at step {s}"));
            break;
        }
    }
    if last_saved != Some(trainer.step) {
        trainer.save_checkpoint(&a.out)?;
    }
    say(format!(
        "checkpoint {}",
        Trainer::step_dir(&a.out, trainer.step).display()
    ));
    Ok(())
}
