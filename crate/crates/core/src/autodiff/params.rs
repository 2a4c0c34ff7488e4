use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Mat;
use crate::error::{Error, Result};
use crate::mrsv::{Container, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Mat,
    trainable: bool,
}

/// Named parameter matrices. Frozen entries take part in forward passes but
/// never receive gradients or optimizer updates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Mat, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_frozen(&mut self, name: &str, value: Mat) -> ParamId {
        self.insert(name, value, false)
    }

    /// Glorot-uniform matrix.
    pub fn add_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let m = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, m)
    }

    pub fn add_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let m = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn to_container(&self, meta: serde_json::Value) -> Container {
        let mut c = Container::new(meta);
        for e in &self.entries {
            c.push(e.name.clone(), Tensor::from_f64_matrix(&e.value));
        }
        c
    }

    /// Overwrites values from a container, checking every name and shape.
    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        if c.entries.len() != self.entries.len() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "holds {} tensors, model expects {}",
                    c.entries.len(),
                    self.entries.len()
                ),
            ));
        }
        for e in &mut self.entries {
            let t = c
                .get(&e.name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {}", e.name)))?;
            let m = t.to_f64_matrix()?;
            if m.dim() != e.value.dim() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        e.name,
                        m.dim(),
                        e.value.dim()
                    ),
                ));
            }
            e.value = m;
        }
        Ok(())
    }
}

/// Gradients for trainable parameters, indexed like the store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn empty(n: usize) -> Self {
        Gradients {
            grads: vec![None; n],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Mat>>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (dst, src) in self.grads.iter_mut().zip(other.grads) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => *d += &s,
                (None, Some(s)) => *dst = Some(s),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
