use ndarray::{Array1, Array2, Axis};

use super::params::ParamId;
use super::Mat;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[input x 4H]`
    pub w_ih: ParamId,
    /// `[H x 4H]`
    pub w_hh: ParamId,
    /// `[1 x 4H]`
    pub bias: ParamId,
}

/// Activations kept for the backward sweep, indexed by input time.
pub(crate) struct LstmCache {
    gates: Mat,
    tanh_cells: Mat,
    h_prev: Mat,
    c_prev: Mat,
    reverse: bool,
}

pub(crate) struct LstmBackward {
    pub dx: Option<Mat>,
    pub dw_ih: Mat,
    pub dw_hh: Mat,
    pub db: Mat,
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub(crate) fn forward(
    x: &Mat,
    w_ih: &Mat,
    w_hh: &Mat,
    bias: &Mat,
    reverse: bool,
) -> (Mat, LstmCache) {
    let len = x.nrows();
    let hidden = w_hh.nrows();
    let pre = x.dot(w_ih) + bias;
    let mut gates = Array2::zeros((len, 4 * hidden));
    let mut tanh_cells = Array2::zeros((len, hidden));
    let mut h_prev = Array2::zeros((len, hidden));
    let mut c_prev = Array2::zeros((len, hidden));
    let mut out = Array2::zeros((len, hidden));
    let mut h = Array1::<f64>::zeros(hidden);
    let mut c = Array1::<f64>::zeros(hidden);

    for t in order(len, reverse) {
        h_prev.row_mut(t).assign(&h);
        c_prev.row_mut(t).assign(&c);
        let z = &pre.row(t) + &h.dot(w_hh);
        for j in 0..hidden {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[hidden + j]);
            let c_g = z[2 * hidden + j].tanh();
            let o_g = sigmoid(z[3 * hidden + j]);
            let cell = f_g * c[j] + i_g * c_g;
            let tc = cell.tanh();
            gates[[t, j]] = i_g;
            gates[[t, hidden + j]] = f_g;
            gates[[t, 2 * hidden + j]] = c_g;
            gates[[t, 3 * hidden + j]] = o_g;
            tanh_cells[[t, j]] = tc;
            c[j] = cell;
            h[j] = o_g * tc;
        }
        out.row_mut(t).assign(&h);
    }
    (
        out,
        LstmCache {
            gates,
            tanh_cells,
            h_prev,
            c_prev,
            reverse,
        },
    )
}

pub(crate) fn backward(
    g: &Mat,
    x: &Mat,
    w_ih: &Mat,
    w_hh: &Mat,
    cache: &LstmCache,
    want_dx: bool,
) -> LstmBackward {
    let len = g.nrows();
    let hidden = w_hh.nrows();
    let mut dz = Array2::zeros((len, 4 * hidden));
    let mut dh_next = Array1::<f64>::zeros(hidden);
    let mut dc_next = Array1::<f64>::zeros(hidden);

    for t in order(len, !cache.reverse) {
        for j in 0..hidden {
            let i_g = cache.gates[[t, j]];
            let f_g = cache.gates[[t, hidden + j]];
            let c_g = cache.gates[[t, 2 * hidden + j]];
            let o_g = cache.gates[[t, 3 * hidden + j]];
            let tc = cache.tanh_cells[[t, j]];
            let dh = g[[t, j]] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            dz[[t, j]] = dc * c_g * i_g * (1.0 - i_g);
            dz[[t, hidden + j]] = dc * cache.c_prev[[t, j]] * f_g * (1.0 - f_g);
            dz[[t, 2 * hidden + j]] = dc * i_g * (1.0 - c_g * c_g);
            dz[[t, 3 * hidden + j]] = d_o * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        dh_next = w_hh.dot(&dz.row(t));
    }

    LstmBackward {
        dx: want_dx.then(|| dz.dot(&w_ih.t())),
        dw_ih: x.t().dot(&dz),
        dw_hh: cache.h_prev.t().dot(&dz),
        db: dz.sum_axis(Axis(0)).insert_axis(Axis(0)),
    }
}
