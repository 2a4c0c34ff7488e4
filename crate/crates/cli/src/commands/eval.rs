use std::path::PathBuf;

use clap::Args;
use mrsvs_core::corpus::CorpusManifest;
use mrsvs_core::synth::{Synthesizer, PARAMS_FILE};
use mrsvs_core::training::{evaluate_with, EvalOptions, TrainSet, METRICS_HEADER};

use super::infer::resolve_checkpoint;
use super::{create_dir, exec, say, write_text, ConfigArgs};
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn step_of(dir: &std::path::Path) -> u64 {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("step_"))
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut cfg = a.cfg.resolve(None, &[])?;
    let (step, _) = resolve_checkpoint(&a.ckpt)?;
    let synth = Synthesizer::load(&step.join(PARAMS_FILE))?;
    cfg.synth = synth.cfg.clone();
    let manifest = CorpusManifest::read(&a.corpus)?;
    let set = TrainSet::from_manifest(&synth, &manifest)?;
    let opts = EvalOptions {
        backend: cfg.vocoder.backend()?,
        audio_metrics: cfg.train.audio_metrics,
        n_refs: cfg.optimizer.n_refs,
    };
    let m = evaluate_with(&synth, &set, &opts, exec())?;
    let dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| ".".into());
    create_dir(&dir)?;
    write_text(
        &a.out,
        &format!("{METRICS_HEADER}\n{}\n", m.csv_row(step_of(&step))),
    )?;
    cfg.snapshot(&dir)?;
    say(format!(
        "{} on {} utterances: {m}",
        step.display(),
        set.len()
    ));
    Ok(())
}
