use super::CorpusManifest;
use crate::error::Error;
use crate::exec::Exec;
use crate::signal::FeatureConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryReport {
    pub id: String,
    /// `None` when the utterance passes.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub entries: Vec<EntryReport>,
    /// Set when the manifest was written under a different feature configuration.
    pub config_mismatch: Option<String>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &EntryReport> {
        self.entries.iter().filter(|e| e.failure.is_some())
    }

    pub fn passed(&self) -> bool {
        self.config_mismatch.is_none() && self.failures().next().is_none()
    }
}

/// Checks every entry against the utterance invariants. Read-only; missing
/// or unparsable files are reported per entry.
pub fn validate_corpus(manifest: &CorpusManifest, cfg: &FeatureConfig) -> ValidationReport {
    let entries = Exec::default().map(&manifest.entries, |entry| {
        let failure = match manifest.load_utterance(entry, cfg, false) {
            Err(e) => Some(e.to_string()),
            Ok(utt) => match utt.check(cfg) {
                Ok(()) => None,
                Err(e @ Error::LengthMismatch { .. }) => Some(e.to_string()),
                Err(e) => Some(format!("invalid features: {e}")),
            },
        };
        EntryReport {
            id: entry.id.clone(),
            failure,
        }
    });
    let config_mismatch = (manifest.feature_digest != cfg.digest()).then(|| {
        format!(
            "manifest feature config {} differs from active config {}",
            manifest.feature_digest,
            cfg.digest()
        )
    });
    ValidationReport {
        entries,
        config_mismatch,
    }
}
