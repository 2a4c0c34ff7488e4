//! Layers built on the autodiff graph.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Graph, LstmWeights, Mat, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_xavier(&format!("{name}.w"), input, output, rng);
        let b = bias.then(|| store.add_zeros(&format!("{name}.b"), 1, output));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add_const(&format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.add_zeros(&format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, 1e-5)
    }
}

/// 1-D convolution over time: `[L x C_in] -> [L_out x C_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    kernel: usize,
    stride: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Conv1d {
            w: store.add_xavier(&format!("{name}.w"), kernel * input, output, rng),
            b: store.add_zeros(&format!("{name}.b"), 1, output),
            kernel,
            stride,
        }
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn output_len(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let cols = if self.kernel == 1 && self.stride == 1 {
            x
        } else {
            g.im2col(x, self.kernel, self.stride, self.pad())
        };
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

/// Scaled dot-product attention over `heads` column groups of `q`, `k`, `v`.
///
/// Each head uses `softmax(q_h k_h^T / sqrt(d_h)) v_h`; head outputs are
/// concatenated along columns. Also returns the per-head weight matrices.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> (Var, Vec<Var>) {
    let d = g.shape(q).1;
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    assert_eq!(g.shape(k).1, d);
    let dv = g.shape(v).1;
    assert_eq!(dv % heads, 0);
    let dh = d / heads;
    let dvh = dv / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, (h + 1) * dh),
                g.slice_cols(k, h * dh, (h + 1) * dh),
                g.slice_cols(v, h * dvh, (h + 1) * dvh),
            )
        };
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let w = g.softmax_rows(scores);
        outs.push(g.matmul(w, vh));
        weights.push(w);
    }
    let out = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    };
    (out, weights)
}

#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SelfAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let (a, _) = multi_head_attention(g, q, k, v, self.heads);
        self.o.forward(g, a)
    }
}

/// Feed-forward Transformer block: self-attention and a two-layer 1-D
/// convolutional network, each wrapped in residual + post layer norm.
#[derive(Debug, Clone, Copy)]
pub struct FftBlock {
    attn: SelfAttention,
    norm1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    norm2: LayerNorm,
    dropout: f64,
}

impl FftBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        filter: usize,
        kernel: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        FftBlock {
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            conv1: Conv1d::new(store, &format!("{name}.conv1"), dim, filter, kernel, 1, rng),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), filter, dim, 1, 1, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let a = self.attn.forward(g, x);
        let a = g.dropout(a, self.dropout);
        let sum = g.add(x, a);
        let x = self.norm1.forward(g, sum);
        let f = self.conv1.forward(g, x);
        let f = g.relu(f);
        let f = self.conv2.forward(g, f);
        let f = g.dropout(f, self.dropout);
        let sum = g.add(x, f);
        self.norm2.forward(g, sum)
    }
}

/// One bidirectional LSTM layer; output is `[L x 2H]` (forward | backward).
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    fwd: LstmWeights,
    bwd: LstmWeights,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dir = |tag: &str, rng: &mut _| {
            let w_ih = store.add_xavier(&format!("{name}.{tag}.w_ih"), input, 4 * hidden, rng);
            let w_hh = store.add_xavier(&format!("{name}.{tag}.w_hh"), hidden, 4 * hidden, rng);
            let mut b = Array2::zeros((1, 4 * hidden));
            // forget gate starts open
            b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
            let bias = store.add(&format!("{name}.{tag}.b"), b);
            LstmWeights { w_ih, w_hh, bias }
        };
        let fwd = dir("fwd", rng);
        let bwd = dir("bwd", rng);
        BiLstm { fwd, bwd }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let run = |g: &mut Graph, w: &LstmWeights, reverse| {
            let (a, b, c) = (g.param(w.w_ih), g.param(w.w_hh), g.param(w.bias));
            g.lstm(x, a, b, c, reverse)
        };
        let f = run(g, &self.fwd, false);
        let b = run(g, &self.bwd, true);
        g.concat_cols(&[f, b])
    }
}

/// Sinusoidal position table `[len x dim]`.
pub fn sinusoid_positions(len: usize, dim: usize) -> Mat {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
