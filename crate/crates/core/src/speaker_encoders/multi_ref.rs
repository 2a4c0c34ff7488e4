use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{multi_head_attention, BiLstm, Conv1d};

pub const MIN_REFERENCE_FRAMES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiRefConfig {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_layers: usize,
    /// Cells per LSTM direction.
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub d_m: usize,
    pub heads: usize,
}

impl Default for MultiRefConfig {
    fn default() -> Self {
        MultiRefConfig {
            conv_channels: 512,
            conv_kernel: 3,
            conv_stride: 2,
            conv_layers: 2,
            lstm_hidden: 256,
            lstm_layers: 2,
            d_m: 256,
            heads: 8,
        }
    }
}

impl MultiRefConfig {
    pub fn d_ref(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_m.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_m {} not divisible by {} heads",
                self.d_m, self.heads
            )));
        }
        if self.conv_kernel == 0
            || self.conv_stride == 0
            || self.conv_channels == 0
            || self.lstm_hidden == 0
        {
            return Err(Error::invalid(
                "multi-reference encoder sizes must be positive",
            ));
        }
        if self.lstm_layers == 0 {
            return Err(Error::invalid(
                "multi-reference encoder needs an LSTM layer",
            ));
        }
        Ok(())
    }
}

/// Encoded references concatenated along time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedReferenceSequence {
    /// `[L_r x d_ref]`.
    pub s: Mat,
    /// Offsets `0 = b_0 < b_1 < ... < b_n = L_r`; reference `i` occupies
    /// rows `b_i..b_{i+1}`.
    pub boundaries: Vec<usize>,
}

impl FlattenedReferenceSequence {
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }
}

/// Output of [`MultiRefEncoder::attend`].
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    /// High-fidelity embeddings `[T x d_m]`.
    pub e: Mat,
    /// Concatenated head outputs before the output projection.
    pub context: Mat,
    /// Per-head attention weights `[T x L_r]`.
    pub weights: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct MultiRefEncoder {
    pub cfg: MultiRefConfig,
    n_mels: usize,
    query_dim: usize,
    convs: Vec<Conv1d>,
    lstms: Vec<BiLstm>,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

impl MultiRefEncoder {
    /// `query_dim` is the width of the frame hidden states used as queries.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &MultiRefConfig,
        n_mels: usize,
        query_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut width = n_mels;
        for i in 0..cfg.conv_layers {
            convs.push(Conv1d::new(
                store,
                &format!("{name}.conv{i}"),
                width,
                cfg.conv_channels,
                cfg.conv_kernel,
                cfg.conv_stride,
                rng,
            ));
            width = cfg.conv_channels;
        }
        let mut lstms = Vec::new();
        for i in 0..cfg.lstm_layers {
            lstms.push(BiLstm::new(
                store,
                &format!("{name}.lstm{i}"),
                width,
                cfg.lstm_hidden,
                rng,
            ));
            width = 2 * cfg.lstm_hidden;
        }
        let w_q = store.add_xavier(&format!("{name}.attn.w_q"), query_dim, cfg.d_m, rng);
        let w_k = store.add_xavier(&format!("{name}.attn.w_k"), cfg.d_ref(), cfg.d_m, rng);
        let w_v = store.add_xavier(&format!("{name}.attn.w_v"), cfg.d_ref(), cfg.d_m, rng);
        let w_o = store.add_xavier(&format!("{name}.attn.w_o"), cfg.d_m, cfg.d_m, rng);
        Ok(MultiRefEncoder {
            cfg: cfg.clone(),
            n_mels,
            query_dim,
            convs,
            lstms,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    pub fn encoded_len(&self, frames: usize) -> usize {
        self.convs.iter().fold(frames, |l, c| c.output_len(l))
    }

    fn check_refs(&self, refs: &[Mat]) -> Result<()> {
        if refs.is_empty() {
            return Err(Error::invalid("no reference audio given"));
        }
        for (i, r) in refs.iter().enumerate() {
            if r.nrows() < MIN_REFERENCE_FRAMES {
                return Err(Error::invalid(format!(
                    "reference {i} has {} frames, need at least {MIN_REFERENCE_FRAMES}",
                    r.nrows()
                )));
            }
            if r.ncols() != self.n_mels {
                return Err(Error::Shape(format!(
                    "reference {i} has {} bands, expected {}",
                    r.ncols(),
                    self.n_mels
                )));
            }
        }
        Ok(())
    }

    /// Conv + BiLSTM per reference, concatenated in input order.
    pub fn encode_graph(&self, g: &mut Graph, refs: &[Mat]) -> Result<(Var, Vec<usize>)> {
        self.check_refs(refs)?;
        let mut parts = Vec::with_capacity(refs.len());
        let mut boundaries = vec![0];
        for r in refs {
            let mut x = g.constant(r.clone());
            for c in &self.convs {
                x = c.forward(g, x);
                x = g.relu(x);
            }
            for l in &self.lstms {
                x = l.forward(g, x);
            }
            boundaries.push(boundaries.last().unwrap() + g.shape(x).0);
            parts.push(x);
        }
        let s = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)
        };
        Ok((s, boundaries))
    }

    /// Multi-head attention of frame states `h` over `s`; returns
    /// `(e, context, weights)`.
    pub fn attend_graph(&self, g: &mut Graph, h: Var, s: Var) -> Result<(Var, Var, Vec<Var>)> {
        let (t, dq) = g.shape(h);
        let (lr, dr) = g.shape(s);
        if lr == 0 {
            return Err(Error::invalid("empty reference sequence (L_r == 0)"));
        }
        if dq != self.query_dim || dr != self.cfg.d_ref() {
            return Err(Error::Shape(format!(
                "attend expects h [T x {}] and S [L_r x {}], got [{t} x {dq}] and [{lr} x {dr}]",
                self.query_dim,
                self.cfg.d_ref()
            )));
        }
        let (wq, wk, wv, wo) = (
            g.param(self.w_q),
            g.param(self.w_k),
            g.param(self.w_v),
            g.param(self.w_o),
        );
        let q = g.matmul(h, wq);
        let k = g.matmul(s, wk);
        let v = g.matmul(s, wv);
        let (context, weights) = multi_head_attention(g, q, k, v, self.cfg.heads);
        let e = g.matmul(context, wo);
        Ok((e, context, weights))
    }

    pub fn encode_references(
        &self,
        store: &ParamStore,
        refs: &[Mat],
    ) -> Result<FlattenedReferenceSequence> {
        let mut g = Graph::new(store);
        let (s, boundaries) = self.encode_graph(&mut g, refs)?;
        Ok(FlattenedReferenceSequence {
            s: g.value(s).clone(),
            boundaries,
        })
    }

    pub fn attend(
        &self,
        store: &ParamStore,
        h: &Mat,
        s: &FlattenedReferenceSequence,
    ) -> Result<Attended> {
        let mut g = Graph::new(store);
        let hv = g.constant(h.clone());
        let sv = g.constant(s.s.clone());
        let (e, context, weights) = self.attend_graph(&mut g, hv, sv)?;
        Ok(Attended {
            e: g.value(e).clone(),
            context: g.value(context).clone(),
            weights: weights.iter().map(|&w| g.value(w).clone()).collect(),
        })
    }
}
