use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::mrsv::{read_container, write_container, Container, Tensor};

pub const FIXED_EMBED_DIM: usize = 256;
/// Seed of the frozen stats projection.
pub const FIXED_PROJECTION_SEED: u64 = 0x4d52_5356_5350_4b52;

/// Unit-norm speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(Vec<f64>);

impl SpeakerEmbedding {
    /// Normalizes `v` to unit length.
    pub fn from_raw(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid(
                "speaker embedding has zero or non-finite norm",
            ));
        }
        Ok(SpeakerEmbedding(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_row(&self) -> Mat {
        Array2::from_shape_vec((1, self.0.len()), self.0.clone()).expect("row shape")
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// A reference clip: normalized mel `[T x n_mels]` and its utterance id.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceMel<'a> {
    pub id: &'a str,
    pub mel: &'a Mat,
}

/// Frozen random projection of per-band mel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsProjector {
    projection: Mat,
}

impl StatsProjector {
    pub fn new(n_mels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FIXED_PROJECTION_SEED);
        let n = Normal::new(0.0, 1.0 / ((2 * n_mels) as f64).sqrt()).expect("valid std");
        StatsProjector {
            projection: Array2::from_shape_fn((2 * n_mels, FIXED_EMBED_DIM), |_| {
                n.sample(&mut rng)
            }),
        }
    }

    /// Wraps a stored projection `[2 * n_mels x d]`.
    pub fn from_projection(projection: Mat) -> Result<Self> {
        if projection.nrows() == 0 || !projection.nrows().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "stats projection has {} rows",
                projection.nrows()
            )));
        }
        Ok(StatsProjector { projection })
    }

    pub fn projection(&self) -> &Mat {
        &self.projection
    }

    /// Per-band means (minus their across-band average) followed by per-band
    /// standard deviations.
    pub fn stats(&self, mel: &Mat) -> Result<Array1<f64>> {
        let bands = self.projection.nrows() / 2;
        if mel.ncols() != bands || mel.nrows() == 0 {
            return Err(Error::Shape(format!(
                "stats encoder expects [T x {bands}] with T >= 1, got {:?}",
                mel.dim()
            )));
        }
        let mean = mel.mean_axis(Axis(0)).expect("non-empty");
        let std = mel.std_axis(Axis(0), 0.0);
        let level = mean.mean().expect("non-empty");
        let mut out = Array1::zeros(2 * bands);
        for b in 0..bands {
            out[b] = mean[b] - level;
            out[bands + b] = std[b];
        }
        Ok(out)
    }

    pub fn embed(&self, mel: &Mat) -> Result<SpeakerEmbedding> {
        let v = self.stats(mel)?.dot(&self.projection);
        SpeakerEmbedding::from_raw(v.to_vec())
    }
}

/// Precomputed vectors keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) {
        self.vectors.insert(id.into(), v);
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        let mut out = ExternalEmbeddings::default();
        for (name, t) in &c.entries {
            let v = t.to_f32_vec()?;
            out.insert(name.clone(), v.iter().map(|&x| x as f64).collect());
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(json!({ "kind": "speaker_embeddings" }));
        for (id, v) in &self.vectors {
            let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            c.push(id.clone(), Tensor::from_f32_vec(&f));
        }
        write_container(path, &c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixedBackend {
    BuiltinStats(StatsProjector),
    ExternalFile(ExternalEmbeddings),
}

impl FixedBackend {
    pub fn builtin(n_mels: usize) -> Self {
        FixedBackend::BuiltinStats(StatsProjector::new(n_mels))
    }

    pub fn embed_one(&self, r: &ReferenceMel) -> Result<SpeakerEmbedding> {
        match self {
            FixedBackend::BuiltinStats(p) => p.embed(r.mel),
            FixedBackend::ExternalFile(e) => {
                let v = e
                    .get(r.id)
                    .ok_or_else(|| Error::MissingEmbedding(r.id.to_string()))?;
                SpeakerEmbedding::from_raw(v.to_vec())
            }
        }
    }
}

/// Mean of the per-reference embeddings, renormalized.
pub fn fixed_embed(refs: &[ReferenceMel], backend: &FixedBackend) -> Result<SpeakerEmbedding> {
    if refs.is_empty() {
        return Err(Error::invalid("fixed_embed needs at least one reference"));
    }
    let mut acc: Vec<f64> = Vec::new();
    for r in refs {
        let e = backend.embed_one(r)?;
        if acc.is_empty() {
            acc = vec![0.0; e.len()];
        } else if acc.len() != e.len() {
            return Err(Error::Shape(format!(
                "embedding for {} has width {}",
                r.id,
                e.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(e.as_slice()) {
            *a += x;
        }
    }
    let k = refs.len() as f64;
    SpeakerEmbedding::from_raw(acc.into_iter().map(|a| a / k).collect())
}
