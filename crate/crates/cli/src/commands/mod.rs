use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{Profile, RunConfig};
use crate::error::{CliError, CliResult};

pub mod corpus;
pub mod eval;
pub mod infer;
pub mod train;

#[derive(Debug, Parser)]
#[command(
    name = "mrsvs",
    version,
    about = "Zero-shot multi-speaker singing voice synthesis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-singer corpus with features and alignments.
    MakeToyCorpus(corpus::MakeToyCorpusArgs),
    /// Extract mel and f0 features for every wav in a corpus.
    Preprocess(corpus::PreprocessArgs),
    /// Check every utterance of a corpus against the feature invariants.
    Validate(corpus::ValidateArgs),
    /// Train the acoustic model and multi-reference encoder.
    Train(train::TrainArgs),
    /// Convert a source recording to the voice of the reference singer.
    Convert(infer::ConvertArgs),
    /// Synthesize a score in the voice of the reference singer.
    Synthesize(infer::SynthesizeArgs),
    /// Write objective metrics of a checkpoint on a corpus.
    Eval(eval::EvalArgs),
}

/// Options shared by every command that resolves a [`RunConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file, overlaid on the profile defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set optimizer.warmup=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for initialization, sampling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(
        &self,
        profile: Option<Profile>,
        extra: &[(&str, Value)],
    ) -> CliResult<RunConfig> {
        let mut pairs: Vec<(String, Value)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            pairs.push((k.trim().to_string(), value));
        }
        if let Some(s) = self.seed {
            pairs.push(("seed".into(), Value::from(s)));
        }
        let mut all: Vec<(&str, Value)> = extra.to_vec();
        all.extend(pairs.iter().map(|(k, v)| (k.as_str(), v.clone())));
        RunConfig::resolve(profile, self.config.as_deref(), &all)
    }
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::MakeToyCorpus(a) => corpus::make_toy_corpus(&a),
        Command::Preprocess(a) => corpus::preprocess(&a),
        Command::Validate(a) => corpus::validate(&a),
        Command::Train(a) => train::train(&a),
        Command::Convert(a) => infer::convert(&a),
        Command::Synthesize(a) => infer::synthesize(&a),
        Command::Eval(a) => eval::eval(&a),
    }
}

pub(crate) fn exec() -> mrsvs_core::exec::Exec {
    mrsvs_core::exec::Exec::default()
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    write_text(
        path,
        &(serde_json::to_string_pretty(value).expect("json") + "\n"),
    )
}

pub(crate) fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn say(line: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", line.as_ref());
}
