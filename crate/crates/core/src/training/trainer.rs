use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{lr_schedule, make_batches_from_lengths, AdamW, OptimizerConfig};
use crate::acoustic_model::AcousticInputs;
use crate::autodiff::{Gradients, Graph, Mat};
use crate::corpus::{CorpusManifest, Utterance};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mrsv::{read_container, write_container};
use crate::speaker_encoders::{ReferenceMel, SpeakerEmbedding};
use crate::synth::{Synthesizer, PARAMS_FILE};

pub const OPTIM_FILE: &str = "optim.mrsv";
pub const CONFIG_FILE: &str = "config.json";

/// One training utterance with everything the forward pass needs.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub speaker: String,
    pub inputs: AcousticInputs,
    pub f0: Vec<f64>,
    /// Normalized target mel.
    pub target: Mat,
    /// Fixed-size embedding of the target itself.
    pub spk: SpeakerEmbedding,
    /// Same-speaker reference candidates, excluding this item when possible.
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainSet {
    pub items: Vec<TrainItem>,
}

impl TrainSet {
    pub fn from_utterances(synth: &Synthesizer, utts: &[Utterance]) -> Result<Self> {
        if utts.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let fc = &synth.cfg.features;
        let backend = synth.fixed_backend();
        let mut items = Vec::with_capacity(utts.len());
        for (i, u) in utts.iter().enumerate() {
            u.check(fc)?;
            let target = fc.normalize(&u.mel);
            let spk = backend.embed_one(&ReferenceMel {
                id: &u.id,
                mel: &target,
            })?;
            let mut candidates: Vec<usize> = (0..utts.len())
                .filter(|&j| j != i && utts[j].speaker_id == u.speaker_id)
                .collect();
            if candidates.is_empty() {
                candidates.push(i);
            }
            items.push(TrainItem {
                id: u.id.clone(),
                speaker: u.speaker_id.clone(),
                inputs: synth.inputs(&u.alignment, &u.f0),
                f0: u.f0.values.clone(),
                target,
                spk,
                candidates,
            });
        }
        Ok(TrainSet { items })
    }

    pub fn from_manifest(synth: &Synthesizer, manifest: &CorpusManifest) -> Result<Self> {
        TrainSet::from_utterances(synth, &manifest.load_all(&synth.cfg.features)?)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn frames(&self, i: usize) -> usize {
        self.items[i].target.nrows()
    }
}

/// Sum of `|pred - target|` over the first `lengths[i]` rows of each pair,
/// divided by the number of valid cells. Rows past the length are padding.
pub fn masked_l1(preds: &[Mat], targets: &[Mat], lengths: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut cells = 0usize;
    for ((p, t), &len) in preds.iter().zip(targets).zip(lengths) {
        if p.dim() != t.dim() || len > p.nrows() {
            return Err(Error::Shape(format!(
                "prediction {:?}, target {:?}, length {len}",
                p.dim(),
                t.dim()
            )));
        }
        for r in 0..len {
            total += p
                .row(r)
                .iter()
                .zip(t.row(r))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        }
        cells += len * p.ncols();
    }
    if cells == 0 {
        return Err(Error::invalid("no valid frames"));
    }
    Ok(total / cells as f64)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Model, optimizer and step counter. All randomness is derived from the
/// seed and the step, so a restored trainer continues bit-identically.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub synth: Synthesizer,
    pub optim: AdamW,
    pub cfg: OptimizerConfig,
    pub step: u64,
    pub best_val: Option<f64>,
}

impl Trainer {
    pub fn new(synth: Synthesizer, cfg: &OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let optim = AdamW::new(cfg, synth.store.len());
        Ok(Trainer {
            synth,
            optim,
            cfg: cfg.clone(),
            step: 0,
            best_val: None,
        })
    }

    pub fn epoch_batches(&self, set: &TrainSet, epoch: u64) -> Result<Vec<Vec<usize>>> {
        let ids: Vec<String> = set.items.iter().map(|i| i.id.clone()).collect();
        let lens: Vec<usize> = (0..set.len()).map(|i| set.frames(i)).collect();
        make_batches_from_lengths(
            &ids,
            &lens,
            self.cfg.token_budget,
            mix(self.cfg.seed, epoch, 0xba7c),
        )
    }

    /// The batch consumed by the next step.
    pub fn next_batch(&self, set: &TrainSet) -> Result<Vec<usize>> {
        let first = self.epoch_batches(set, 0)?;
        let per_epoch = first.len() as u64;
        let (epoch, k) = (self.step / per_epoch, (self.step % per_epoch) as usize);
        if epoch == 0 {
            return Ok(first[k].clone());
        }
        Ok(self.epoch_batches(set, epoch)?[k].clone())
    }

    /// `n_refs` references for item `i` at `step`: without replacement when
    /// enough candidates exist.
    pub fn sample_refs(&self, set: &TrainSet, i: usize, step: u64) -> Vec<usize> {
        let cands = &set.items[i].candidates;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, step, i as u64 + 1));
        let n = self.cfg.n_refs;
        if cands.len() >= n {
            cands.choose_multiple(&mut rng, n).copied().collect()
        } else {
            (0..n)
                .map(|_| *cands.choose(&mut rng).expect("non-empty"))
                .collect()
        }
    }

    /// Summed L1 and gradients over a batch, both divided by the number of
    /// valid cells. `step` seeds reference sampling and dropout.
    pub fn batch_gradients(
        &self,
        set: &TrainSet,
        batch: &[usize],
        step: u64,
        exec: Exec,
    ) -> Result<(f64, Gradients)> {
        let synth = &self.synth;
        let per_item = exec.try_map(batch, |&i| -> Result<(f64, Gradients)> {
            let item = &set.items[i];
            let refs: Vec<Mat> = self
                .sample_refs(set, i, step)
                .iter()
                .map(|&j| set.items[j].target.clone())
                .collect();
            let rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed ^ 0xd50f, step, i as u64));
            let mut g = Graph::training(&synth.store, rng);
            let y = synth.predict_graph(&mut g, &item.inputs, &item.spk, &refs)?;
            let l = g.l1_sum(y, item.target.clone(), item.target.nrows());
            let value = g.scalar(l);
            Ok((value, g.backward(l)))
        })?;
        let cells: usize = batch.iter().map(|&i| set.items[i].target.len()).sum();
        let mut loss = 0.0;
        let mut grads = Gradients::empty(synth.store.len());
        for (l, g) in per_item {
            loss += l;
            grads.accumulate(g);
        }
        let k = 1.0 / cells as f64;
        grads.scale(k);
        Ok((loss * k, grads))
    }

    /// One optimizer update on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, set: &TrainSet, batch: &[usize], exec: Exec) -> Result<f64> {
        let step = self.step + 1;
        let (loss, mut grads) = self.batch_gradients(set, batch, step, exec)?;
        let norm = grads.global_norm();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch_ids: batch.iter().map(|&i| set.items[i].id.clone()).collect(),
            });
        }
        if norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        let lr = lr_schedule(step, self.cfg.d_model, self.cfg.warmup)?;
        self.optim.step(&mut self.synth.store, &grads, lr);
        self.step = step;
        Ok(loss)
    }

    pub fn step_dir(root: &Path, step: u64) -> PathBuf {
        root.join(format!("step_{step}"))
    }

    /// Writes `step_<N>/params.mrsv`, `step_<N>/optim.mrsv` and `config.json`.
    pub fn save_checkpoint(&self, root: &Path) -> Result<PathBuf> {
        let dir = Trainer::step_dir(root, self.step);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.synth.save(&dir.join(PARAMS_FILE))?;
        let meta = json!({
            "step": self.step,
            "adam_t": self.optim.state.t,
            "best_val": self.best_val,
            "optimizer": self.cfg,
        });
        write_container(
            &dir.join(OPTIM_FILE),
            &self.optim.to_container(&self.synth.store, meta),
        )?;
        let config = json!({ "synth": self.synth.cfg, "optimizer": self.cfg });
        let path = root.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(&config).expect("config serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(dir)
    }

    pub fn load_checkpoint(step_dir: &Path) -> Result<Self> {
        let synth = Synthesizer::load(&step_dir.join(PARAMS_FILE))?;
        let c = read_container(&step_dir.join(OPTIM_FILE))?;
        let field = |k: &str| c.meta.get(k).cloned().unwrap_or_default();
        let cfg: OptimizerConfig = serde_json::from_value(field("optimizer"))
            .map_err(|e| Error::format("optimizer state", e.to_string()))?;
        let step = field("step")
            .as_u64()
            .ok_or_else(|| Error::format("optimizer state", "missing step"))?;
        let t = field("adam_t").as_u64().unwrap_or(step);
        let mut tr = Trainer::new(synth, &cfg)?;
        tr.optim.load_moments(&tr.synth.store, &c, t)?;
        tr.step = step;
        tr.best_val = field("best_val").as_f64();
        Ok(tr)
    }

    /// Highest-numbered `step_<N>` directory under `root`.
    pub fn latest_checkpoint(root: &Path) -> Option<PathBuf> {
        let rd = fs::read_dir(root).ok()?;
        rd.filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let n: u64 = name.strip_prefix("step_")?.parse().ok()?;
                e.path().join(PARAMS_FILE).exists().then(|| (n, e.path()))
            })
            .max_by_key(|(n, _)| *n)
            .map(|(_, p)| p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_toy_corpus;
    use crate::speaker_encoders::MultiRefConfig;
    use crate::synth::SynthConfig;

    fn setup(dir: &Path) -> (Trainer, TrainSet) {
        let m = generate_toy_corpus(&dir.join("corpus"), 2, 2, 3).unwrap();
        let mut c = SynthConfig::toy(m.inventory.len());
        c.model.hidden = 16;
        c.model.filter = 16;
        c.model.hf_dim = 8;
        c.multi_ref = MultiRefConfig {
            conv_channels: 8,
            lstm_hidden: 4,
            d_m: 8,
            heads: 2,
            ..MultiRefConfig::default()
        };
        let synth = Synthesizer::new(&c).unwrap();
        let set = TrainSet::from_manifest(&synth, &m).unwrap();
        let cfg = OptimizerConfig {
            token_budget: 400,
            warmup: 10,
            d_model: 16,
            ..OptimizerConfig::toy()
        };
        (Trainer::new(synth, &cfg).unwrap(), set)
    }

    #[test]
    fn masking_ignores_padding() {
        let p = Mat::from_shape_fn((3, 2), |(r, c)| (r + c) as f64);
        let t = Mat::zeros((3, 2));
        let base = masked_l1(std::slice::from_ref(&p), std::slice::from_ref(&t), &[3]).unwrap();
        let mut pp = Mat::from_elem((5, 2), 99.0);
        pp.slice_mut(ndarray::s![..3, ..]).assign(&p);
        let padded = masked_l1(&[pp], &[Mat::zeros((5, 2))], &[3]).unwrap();
        assert!((base - padded).abs() < 1e-12);
        assert!((base - 9.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn references_exclude_target_and_are_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, set) = setup(dir.path());
        for i in 0..set.len() {
            let r = tr.sample_refs(&set, i, 7);
            assert_eq!(r.len(), 2);
            assert!(r
                .iter()
                .all(|&j| j != i && set.items[j].speaker == set.items[i].speaker));
            assert_eq!(r, tr.sample_refs(&set, i, 7));
        }
    }

    #[test]
    fn resume_reproduces_losses_and_frozen_weights_hold() {
        let dir = tempfile::tempdir().unwrap();
        let (mut tr, set) = setup(dir.path());
        let frozen_before = tr.synth.store.get(tr.synth.fixed_projection).clone();
        for _ in 0..2 {
            let b = tr.next_batch(&set).unwrap();
            tr.train_step(&set, &b, Exec::default()).unwrap();
        }
        let ck = tr.save_checkpoint(&dir.path().join("run")).unwrap();
        assert_eq!(
            Trainer::latest_checkpoint(&dir.path().join("run")).unwrap(),
            ck
        );
        let mut restored = Trainer::load_checkpoint(&ck).unwrap();
        assert_eq!(restored.step, 2);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..2 {
            let batch = tr.next_batch(&set).unwrap();
            a.push(tr.train_step(&set, &batch, Exec::Sequential).unwrap());
            let batch = restored.next_batch(&set).unwrap();
            b.push(restored.train_step(&set, &batch, Exec::default()).unwrap());
        }
        assert_eq!(a, b);
        assert_eq!(
            tr.synth.store.get(tr.synth.fixed_projection),
            &frozen_before
        );
        assert!(dir.path().join("run").join(CONFIG_FILE).exists());
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let dir = tempfile::tempdir().unwrap();
        let (mut tr, set) = setup(dir.path());
        let head = tr.synth.store.id("am.head.b").unwrap();
        tr.synth.store.get_mut(head)[[0, 0]] = f64::NAN;
        let err = tr.train_step(&set, &[1], Exec::default()).unwrap_err();
        assert!(err.to_string().contains(&set.items[1].id), "{err}");
    }
}
