use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{self, LstmCache};
use super::params::{Gradients, ParamId, ParamStore};
use super::Mat;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    L1Sum {
        pred: Var,
        target: Mat,
        rows: usize,
    },
    Sum(Var),
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        cache: Box<LstmCache>,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// A tape of operations built against one parameter store.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: Option<ChaCha8Rng>,
}

impl<'a> Graph<'a> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            training: false,
            rng: None,
        }
    }

    /// Training-mode graph whose dropout masks come from `rng`.
    pub fn training(store: &'a ParamStore, rng: ChaCha8Rng) -> Self {
        Graph {
            training: true,
            rng: Some(rng),
            ..Graph::new(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "not a scalar node");
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: self.store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a . b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Adds the `[1 x n]` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(row);
        assert!(r == 1 && c == self.shape(a).1, "add_row shape mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(lstm::sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// Inverted dropout; identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let (r, c) = self.shape(a);
        let rng = self.rng.as_mut().expect("training graph has an rng");
        let mask = Array2::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let v = self.value(a) * &mask;
        self.push(v, Op::MulConst(a, mask), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalization with `[1 x n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// `out[i] = a[idx[i]]`; used for embedding lookups and length regulation.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Array2::zeros((idx.len(), av.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).assign(&av.row(j));
        }
        self.push(out, Op::GatherRows(a, idx), &[a])
    }

    /// Unfolds a `[L x C]` sequence into `[L_out x kernel*C]` patches with
    /// zero padding `pad` on both ends; a matmul then gives a 1-D convolution.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (l, c) = xv.dim();
        let out_len = (l + 2 * pad - kernel) / stride + 1;
        let mut out = Array2::zeros((out_len, kernel * c));
        for t in 0..out_len {
            for k in 0..kernel {
                let src = (t * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    out.slice_mut(s![t, k * c..(k + 1) * c])
                        .assign(&xv.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start), &[a])
    }

    /// `sum |pred - target|` over the first `rows` rows; later rows are padding.
    pub fn l1_sum(&mut self, pred: Var, target: Mat, rows: usize) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "l1 shape mismatch");
        let total: f64 = p
            .slice(s![..rows, ..])
            .iter()
            .zip(target.slice(s![..rows, ..]).iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        self.push(
            Array2::from_elem((1, 1), total),
            Op::L1Sum { pred, target, rows },
            &[pred],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a), &[a])
    }

    /// One LSTM direction over the rows of `x`; output is `[L x H]` in input
    /// time order. Gate layout along the `4H` axis is input, forget, cell, output.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
        let (out, cache) = lstm::forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
            reverse,
        );
        self.push(
            out,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                cache: Box::new(cache),
            },
            &[x, w_ih, w_hh, bias],
        )
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let mut out = vec![None; self.store.len()];
        for (id, var) in &self.params {
            if self.store.is_trainable(*id) {
                out[id.index()] = grads[var.0].take();
            }
        }
        Gradients::from_vec(out)
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, contrib: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &contrib,
            slot => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let out = match &self.nodes[i].value {
            Value::Owned(m) => m,
            Value::Param(_) => return,
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.wants(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g * *k),
            Op::MulConst(a, mask) => self.acc(grads, *a, g * mask),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(out)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(out)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                self.acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * out;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d -= y * dot);
                }
                self.acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.wants(*gamma) {
                    self.acc(
                        grads,
                        *gamma,
                        (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                if self.wants(*beta) {
                    self.acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh: f64 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = k * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::GatherRows(a, idx) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (r, &j) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(j);
                        dst += &g.row(r);
                    }
                    self.acc(grads, *a, d);
                }
            }
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            } => {
                if self.wants(*x) {
                    let (l, c) = self.shape(*x);
                    let mut d = Array2::zeros((l, c));
                    for t in 0..g.nrows() {
                        for k in 0..*kernel {
                            let src = (t * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < l {
                                let mut dst = d.row_mut(src as usize);
                                dst += &g.slice(s![t, k * c..(k + 1) * c]);
                            }
                        }
                    }
                    self.acc(grads, *x, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.wants(p) {
                        self.acc(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.wants(p) {
                        self.acc(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.shape(*a));
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(self.shape(*a));
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::L1Sum { pred, target, rows } => {
                let p = self.value(*pred);
                let scale = g[[0, 0]];
                let mut d = Array2::zeros(p.dim());
                Zip::from(d.slice_mut(s![..*rows, ..]))
                    .and(p.slice(s![..*rows, ..]))
                    .and(target.slice(s![..*rows, ..]))
                    .for_each(|d, &a, &b| {
                        *d = scale * (a - b).signum() * ((a - b) != 0.0) as u8 as f64;
                    });
                self.acc(grads, *pred, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                self.acc(grads, *a, d);
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                cache,
            } => {
                let back = lstm::backward(
                    g,
                    self.value(*x),
                    self.value(*w_ih),
                    self.value(*w_hh),
                    cache,
                    self.wants(*x),
                );
                if let Some(dx) = back.dx {
                    self.acc(grads, *x, dx);
                }
                self.acc(grads, *w_ih, back.dw_ih);
                self.acc(grads, *w_hh, back.dw_hh);
                self.acc(grads, *bias, back.db);
            }
        }
    }
}
