use crate::autodiff::{Gradients, Mat, ParamStore};
use crate::error::{Error, Result};
use crate::mrsv::{Container, Tensor};

use super::OptimizerConfig;

/// First and second moments per parameter plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub t: u64,
    pub m: Vec<Option<Mat>>,
    pub v: Vec<Option<Mat>>,
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(cfg: &OptimizerConfig, n_params: usize) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            state: AdamWState {
                t: 0,
                m: vec![None; n_params],
                v: vec![None; n_params],
            },
        }
    }

    /// Applies one update. Frozen parameters and parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.state.t += 1;
        let t = self.state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (id, g) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let m = self.state.m[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.state.v[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (
                self.state.m[i].as_ref().unwrap(),
                self.state.v[i].as_ref().unwrap(),
            );
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let update = (m / c1) / ((v / c2).sqrt() + eps) + wd * *p;
                *p -= lr * update;
            });
        }
    }

    pub fn to_container(&self, store: &ParamStore, meta: serde_json::Value) -> Container {
        let mut c = Container::new(meta);
        for id in store.ids() {
            let i = id.index();
            if let (Some(m), Some(v)) = (&self.state.m[i], &self.state.v[i]) {
                c.push(format!("m.{}", store.name(id)), Tensor::from_f64_matrix(m));
                c.push(format!("v.{}", store.name(id)), Tensor::from_f64_matrix(v));
            }
        }
        c
    }

    pub fn load_moments(&mut self, store: &ParamStore, c: &Container, t: u64) -> Result<()> {
        self.state.t = t;
        for id in store.ids() {
            let i = id.index();
            let name = store.name(id);
            let m = c
                .get(&format!("m.{name}"))
                .map(Tensor::to_f64_matrix)
                .transpose()?;
            let v = c
                .get(&format!("v.{name}"))
                .map(Tensor::to_f64_matrix)
                .transpose()?;
            if m.is_some() != v.is_some() {
                return Err(Error::format(
                    "optimizer state",
                    format!("unpaired moments for {name}"),
                ));
            }
            for x in m.iter().chain(&v) {
                if x.dim() != store.get(id).dim() {
                    return Err(Error::format(
                        "optimizer state",
                        format!("moment shape for {name}"),
                    ));
                }
            }
            self.state.m[i] = m;
            self.state.v[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grads_for(store: &ParamStore, g: Mat) -> Gradients {
        let mut out = Gradients::empty(store.len());
        let mut one = vec![None; store.len()];
        one[0] = Some(g);
        out.accumulate(crate::autodiff::Gradients::from_vec(one));
        out
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut s = ParamStore::new();
        s.add("w", array![[1.0, -2.0]]);
        let before = s.get(s.id("w").unwrap()).clone();
        let mut opt = AdamW::new(&OptimizerConfig::default(), s.len());
        let g = grads_for(&s, array![[0.3, 0.7]]);
        opt.step(&mut s, &g, 0.0);
        assert_eq!(s.get(s.id("w").unwrap()), &before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut s = ParamStore::new();
        s.add("w", array![[1.0, -2.0]]);
        let cfg = OptimizerConfig::default();
        let mut opt = AdamW::new(&cfg, s.len());
        let g = grads_for(&s, array![[0.5, -0.25]]);
        opt.step(&mut s, &g, 0.1);
        // bias-corrected first step moves each weight by lr * (sign(g) + wd * p)
        let w = s.get(s.id("w").unwrap());
        let want = [
            1.0 - 0.1 * (0.5 / (0.5 + 1e-9) + 0.01),
            -2.0 - 0.1 * (-0.25 / (0.25 + 1e-9) - 0.02),
        ];
        assert!((w[[0, 0]] - want[0]).abs() < 1e-12);
        assert!((w[[0, 1]] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn frozen_entries_never_move() {
        let mut s = ParamStore::new();
        s.add_frozen("f", array![[1.0]]);
        let mut opt = AdamW::new(&OptimizerConfig::default(), 1);
        let g = grads_for(&s, array![[5.0]]);
        opt.step(&mut s, &g, 1.0);
        assert_eq!(s.get(s.id("f").unwrap())[[0, 0]], 1.0);
    }
}
