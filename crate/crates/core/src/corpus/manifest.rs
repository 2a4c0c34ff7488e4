use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{load_alignment, write_alignment, PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::mrsv::{read_tensor, write_tensor, Tensor};
use crate::signal::{FeatureConfig, MelSpectrogram, PitchContour};
use crate::wav;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PHONES_FILE: &str = "phones.txt";
const HEADER: &str = "id\tspeaker\tmel\tf0\talign\twav";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    pub mel: PathBuf,
    pub f0: PathBuf,
    pub align: PathBuf,
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub feature_digest: String,
    pub inventory: PhonemeInventory,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(root: &Path, cfg: &FeatureConfig, inventory: PhonemeInventory) -> Self {
        CorpusManifest {
            root: root.to_path_buf(),
            feature_digest: cfg.digest(),
            inventory,
            entries: Vec::new(),
        }
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let inventory = PhonemeInventory::read(&root.join(PHONES_FILE))?;
        let mut feature_digest = None;
        let mut entries = Vec::new();
        let mut seen_header = false;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(d) = rest.trim().strip_prefix("feature_config") {
                    feature_digest = Some(d.trim().to_string());
                }
                continue;
            }
            if !seen_header {
                if line != HEADER {
                    return Err(Error::format(
                        "manifest",
                        format!("line {}: expected header {HEADER:?}", n + 1),
                    ));
                }
                seen_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::format(
                    "manifest",
                    format!("line {}: expected 6 columns", n + 1),
                ));
            }
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                speaker: cols[1].to_string(),
                mel: PathBuf::from(cols[2]),
                f0: PathBuf::from(cols[3]),
                align: PathBuf::from(cols[4]),
                wav: (cols[5] != "-").then(|| PathBuf::from(cols[5])),
            });
        }
        let feature_digest = feature_digest
            .ok_or_else(|| Error::format("manifest", "missing '# feature_config' line"))?;
        Ok(CorpusManifest {
            root: root.to_path_buf(),
            feature_digest,
            inventory,
            entries,
        })
    }

    pub fn write(&self) -> Result<()> {
        let mut text = String::new();
        writeln!(text, "# mrsvs corpus manifest v1").expect("string write");
        writeln!(text, "# feature_config {}", self.feature_digest).expect("string write");
        writeln!(text, "{HEADER}").expect("string write");
        for e in &self.entries {
            let p = |p: &Path| p.to_string_lossy().into_owned();
            writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.speaker,
                p(&e.mel),
                p(&e.f0),
                p(&e.align),
                e.wav.as_deref().map(p).unwrap_or_else(|| "-".into())
            )
            .expect("string write");
        }
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.inventory.write(&self.root.join(PHONES_FILE))
    }

    pub fn speakers(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn load_utterance(
        &self,
        entry: &ManifestEntry,
        cfg: &FeatureConfig,
        with_wav: bool,
    ) -> Result<Utterance> {
        let mel = MelSpectrogram {
            data: read_tensor(&self.root.join(&entry.mel))?.to_f32_matrix()?,
        };
        let f0 = PitchContour::new(
            read_tensor(&self.root.join(&entry.f0))?
                .to_f32_vec()?
                .iter()
                .map(|&v| v as f64)
                .collect(),
        );
        let alignment = load_alignment(
            &self.root.join(&entry.align),
            cfg.hop_seconds(),
            &self.inventory,
        )?;
        let waveform = match (&entry.wav, with_wav) {
            (Some(w), true) => Some(wav::read_wav(&self.root.join(w), cfg.sample_rate)?),
            _ => None,
        };
        Ok(Utterance {
            id: entry.id.clone(),
            speaker_id: entry.speaker.clone(),
            alignment,
            f0,
            mel,
            waveform,
        })
    }

    pub fn load_all(&self, cfg: &FeatureConfig) -> Result<Vec<Utterance>> {
        self.entries
            .iter()
            .map(|e| self.load_utterance(e, cfg, false))
            .collect()
    }

    /// Writes an utterance's feature files under the corpus root (disjoint
    /// per id, safe to call concurrently) and returns its manifest entry.
    pub fn save_utterance(&self, utt: &Utterance, cfg: &FeatureConfig) -> Result<ManifestEntry> {
        let entry = ManifestEntry {
            id: utt.id.clone(),
            speaker: utt.speaker_id.clone(),
            mel: PathBuf::from(format!("mel/{}.mrsv", utt.id)),
            f0: PathBuf::from(format!("f0/{}.mrsv", utt.id)),
            align: PathBuf::from(format!("align/{}.txt", utt.id)),
            wav: utt
                .waveform
                .as_ref()
                .map(|_| PathBuf::from(format!("wav/{}.wav", utt.id))),
        };
        for dir in ["mel", "f0", "align", "wav"] {
            let d = self.root.join(dir);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        write_tensor(
            &self.root.join(&entry.mel),
            &Tensor::from_f32_matrix(&utt.mel.data),
        )?;
        let f0: Vec<f32> = utt.f0.values.iter().map(|&v| v as f32).collect();
        write_tensor(&self.root.join(&entry.f0), &Tensor::from_f32_vec(&f0))?;
        write_alignment(
            &self.root.join(&entry.align),
            &utt.alignment,
            &self.inventory,
            cfg.hop_seconds(),
        )?;
        if let (Some(w), Some(samples)) = (&entry.wav, &utt.waveform) {
            wav::write_wav(&self.root.join(w), samples, cfg.sample_rate)?;
        }
        Ok(entry)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut items: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    items.sort_by_key(|e| e.file_name());
    for item in items {
        let p = item.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every file path and content under `root`, in sorted order.
pub fn corpus_digest(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let p = root.join(&rel);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
