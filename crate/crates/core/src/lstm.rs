//! Single LSTM cell with manual backpropagation through time.
//!
//! Gates are packed row-wise in order [input, forget, candidate, output]:
//! `w` is (4H x D), `u` is (4H x H), `b` is 4H. Initial hidden and cell
//! states are zero.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

/// Standard-layout outer product col * row^T.
pub(crate) fn outer(col: ArrayView1<f64>, row: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((col.len(), row.len()));
    for (i, &c) in col.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            out[[i, j]] = c * r;
        }
    }
    out
}

/// Packed parameters of one LSTM direction.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    /// Uniform [-scale, scale] init with forget-gate bias offset +1.0.
    pub fn init(input_dim: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let w = Array2::from_shape_fn((4 * hidden, input_dim), |_| {
            rng.random_range(-scale..scale)
        });
        let u = Array2::from_shape_fn((4 * hidden, hidden), |_| rng.random_range(-scale..scale));
        let mut b = Array1::zeros(4 * hidden);
        for j in hidden..2 * hidden {
            b[j] = 1.0;
        }
        LstmParams { w, u, b }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams {
            w: Array2::zeros(self.w.dim()),
            u: Array2::zeros(self.u.dim()),
            b: Array1::zeros(self.b.dim()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Forward-pass cache for one direction over one sequence.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub xs: Array2<f64>,
    pub gate_i: Array2<f64>,
    pub gate_f: Array2<f64>,
    pub gate_g: Array2<f64>,
    pub gate_o: Array2<f64>,
    pub cell: Array2<f64>,
    pub tanh_cell: Array2<f64>,
    pub hidden: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run the recurrence over `xs` (n x D) with zero initial state.
pub fn lstm_forward(params: &LstmParams, xs: &Array2<f64>) -> LstmCache {
    let n = xs.nrows();
    let h = params.hidden();
    assert_eq!(xs.ncols(), params.input_dim(), "lstm input width mismatch");

    let mut cache = LstmCache {
        xs: xs.clone(),
        gate_i: Array2::zeros((n, h)),
        gate_f: Array2::zeros((n, h)),
        gate_g: Array2::zeros((n, h)),
        gate_o: Array2::zeros((n, h)),
        cell: Array2::zeros((n, h)),
        tanh_cell: Array2::zeros((n, h)),
        hidden: Array2::zeros((n, h)),
    };

    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    for t in 0..n {
        let x = xs.row(t);
        let pre = params.w.dot(&x) + params.u.dot(&h_prev) + &params.b;
        let mut c_t = Array1::<f64>::zeros(h);
        let mut h_t = Array1::<f64>::zeros(h);
        for j in 0..h {
            let gi = sigmoid(pre[j]);
            let gf = sigmoid(pre[h + j]);
            let gg = pre[2 * h + j].tanh();
            let go = sigmoid(pre[3 * h + j]);
            let c = gf * c_prev[j] + gi * gg;
            let tc = c.tanh();
            cache.gate_i[[t, j]] = gi;
            cache.gate_f[[t, j]] = gf;
            cache.gate_g[[t, j]] = gg;
            cache.gate_o[[t, j]] = go;
            cache.cell[[t, j]] = c;
            cache.tanh_cell[[t, j]] = tc;
            c_t[j] = c;
            h_t[j] = go * tc;
        }
        cache.hidden.row_mut(t).assign(&h_t);
        h_prev = h_t;
        c_prev = c_t;
    }
    cache
}

/// Backpropagation through time. `dh_ext` (n x H) is the gradient arriving
/// at each hidden state from outside the recurrence. Returns parameter
/// gradients and the gradient with respect to the inputs (n x D).
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    dh_ext: &Array2<f64>,
) -> (LstmParams, Array2<f64>) {
    let n = cache.xs.nrows();
    let h = params.hidden();
    let d = params.input_dim();
    assert_eq!(dh_ext.dim(), (n, h), "dh_ext shape mismatch");

    let mut grads = params.zeros_like();
    let mut dxs = Array2::<f64>::zeros((n, d));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);

    for t in (0..n).rev() {
        let mut da = Array1::<f64>::zeros(4 * h);
        for j in 0..h {
            let dh = dh_ext[[t, j]] + dh_next[j];
            let gi = cache.gate_i[[t, j]];
            let gf = cache.gate_f[[t, j]];
            let gg = cache.gate_g[[t, j]];
            let go = cache.gate_o[[t, j]];
            let tc = cache.tanh_cell[[t, j]];
            let c_prev = if t == 0 { 0.0 } else { cache.cell[[t - 1, j]] };

            let d_o = dh * tc;
            let dc = dh * go * (1.0 - tc * tc) + dc_next[j];
            let d_f = dc * c_prev;
            let d_i = dc * gg;
            let d_g = dc * gi;

            da[j] = d_i * gi * (1.0 - gi);
            da[h + j] = d_f * gf * (1.0 - gf);
            da[2 * h + j] = d_g * (1.0 - gg * gg);
            da[3 * h + j] = d_o * go * (1.0 - go);
            dc_next[j] = dc * gf;
        }

        let x = cache.xs.row(t);
        let h_prev = if t == 0 {
            Array1::<f64>::zeros(h)
        } else {
            cache.hidden.row(t - 1).to_owned()
        };
        grads.w += &outer(da.view(), x);
        grads.u += &outer(da.view(), h_prev.view());
        grads.b += &da;
        dxs.row_mut(t).assign(&params.w.t().dot(&da));
        dh_next = params.u.t().dot(&da);
    }
    (grads, dxs)
}
