//! Utterances, corpora and their on-disk layout.
//!
//! ```text
//! <root>/manifest.tsv      entries + feature-config digest
//! <root>/phones.txt        phoneme inventory, one label per line (id = line)
//! <root>/mel/<id>.mrsv     [T x 80] f32 log-mel
//! <root>/f0/<id>.mrsv      [T] f32 Hz, 0 = unvoiced
//! <root>/align/<id>.txt    interval alignment
//! <root>/wav/<id>.wav      optional 16-bit mono audio
//! ```

mod alignment;
mod manifest;
mod toy;
mod validate;

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{FeatureConfig, MelSpectrogram, PitchContour};

pub use alignment::{format_alignment, load_alignment, parse_alignment, write_alignment};
pub use manifest::{corpus_digest, CorpusManifest, ManifestEntry, MANIFEST_FILE, PHONES_FILE};
pub use toy::{
    generate_toy_corpus, generate_toy_corpus_with, read_speaker_specs, render_utterance,
    toy_inventory, Segment, ToySpeakerSpec, SPEAKERS_FILE, TOY_NOTE_SYMBOLS,
};
pub use validate::{validate_corpus, EntryReport, ValidationReport};

/// Phoneme ids with per-phoneme frame counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhonemeAlignment {
    pub phonemes: Vec<usize>,
    pub durations: Vec<usize>,
}

impl PhonemeAlignment {
    pub fn new(phonemes: Vec<usize>, durations: Vec<usize>) -> Result<Self> {
        if phonemes.len() != durations.len() {
            return Err(Error::LengthMismatch {
                stream: "durations",
                expected: phonemes.len(),
                actual: durations.len(),
            });
        }
        Ok(PhonemeAlignment {
            phonemes,
            durations,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    /// Phoneme id of every frame.
    pub fn frame_phonemes(&self) -> Vec<usize> {
        self.phonemes
            .iter()
            .zip(&self.durations)
            .flat_map(|(&p, &d)| std::iter::repeat_n(p, d))
            .collect()
    }
}

/// Ordered phoneme labels; a label's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    labels: Vec<String>,
}

impl PhonemeInventory {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::format(
                    "phoneme inventory",
                    format!("bad label {l:?}"),
                ));
            }
            if !seen.insert(l) {
                return Err(Error::format(
                    "phoneme inventory",
                    format!("duplicate label {l:?}"),
                ));
            }
        }
        Ok(PhonemeInventory { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.labels.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One clip with aligned frame-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub alignment: PhonemeAlignment,
    pub f0: PitchContour,
    pub mel: MelSpectrogram,
    pub waveform: Option<Vec<f64>>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    /// Checks frame-count agreement and value ranges.
    pub fn check(&self, cfg: &FeatureConfig) -> Result<()> {
        let t = self.mel.frames();
        if self.f0.len() != t {
            return Err(Error::LengthMismatch {
                stream: "f0",
                expected: t,
                actual: self.f0.len(),
            });
        }
        if self.alignment.total_frames() != t {
            return Err(Error::LengthMismatch {
                stream: "durations",
                expected: t,
                actual: self.alignment.total_frames(),
            });
        }
        self.mel.check(cfg)?;
        self.f0.check(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_phonemes_expand_durations() {
        let a = PhonemeAlignment::new(vec![4, 1, 2], vec![2, 0, 3]).unwrap();
        assert_eq!(a.frame_phonemes(), vec![4, 4, 2, 2, 2]);
        assert_eq!(a.total_frames(), 5);
        assert!(PhonemeAlignment::new(vec![1], vec![]).is_err());
    }

    #[test]
    fn inventory_rejects_duplicates() {
        assert!(PhonemeInventory::new(vec!["a".into(), "a".into()]).is_err());
        let inv = PhonemeInventory::new(vec!["a".into(), "sil".into()]).unwrap();
        assert_eq!(inv.id("sil"), Some(1));
        assert_eq!(inv.label(0), Some("a"));
        assert_eq!(inv.id("x"), None);
    }
}
