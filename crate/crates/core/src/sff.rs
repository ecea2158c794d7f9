//! Sequential feature fusion: per-utterance FC projection, dialogue-level
//! Bi-LSTM, and a feed-forward layer with ReLU and L2 normalization, with
//! exact analytic gradients.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams};

/// Division guard used when normalizing representations.
pub const NORM_EPSILON: f64 = 1e-12;

/// Which parts of the fusion stack are active. `NoBilstm` drops the Bi-LSTM
/// and feeds the FC projection straight into the feed-forward layer;
/// `NoSff` normalizes the raw utterance embeddings directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SffMode {
    Full,
    NoBilstm,
    NoSff,
}

impl Default for SffMode {
    fn default() -> Self {
        SffMode::Full
    }
}

/// All trainable tensors of the fusion stack. Hidden size per Bi-LSTM
/// direction is d/2, so d must be even.
#[derive(Debug, Clone)]
pub struct SffParams {
    pub w_fc: Array2<f64>,
    pub b_fc: Array1<f64>,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub w_ffn: Array2<f64>,
    pub b_ffn: Array1<f64>,
}

impl SffParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        assert!(d >= 2 && d % 2 == 0, "model dimension must be even");
        let scale = 1.0 / (d as f64).sqrt();
        let half = d / 2;
        SffParams {
            w_fc: Array2::from_shape_fn((d, d), |_| rng.random_range(-scale..scale)),
            b_fc: Array1::zeros(d),
            fwd: LstmParams::init(d, half, scale, rng),
            bwd: LstmParams::init(d, half, scale, rng),
            w_ffn: Array2::from_shape_fn((d, d), |_| rng.random_range(-scale..scale)),
            b_ffn: Array1::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SffParams {
            w_fc: Array2::zeros(self.w_fc.dim()),
            b_fc: Array1::zeros(self.b_fc.dim()),
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
            w_ffn: Array2::zeros(self.w_ffn.dim()),
            b_ffn: Array1::zeros(self.b_ffn.dim()),
        }
    }

    pub fn d(&self) -> usize {
        self.w_fc.nrows()
    }

    /// FC projection of one utterance embedding.
    pub fn fc_project(&self, u: &Array1<f64>) -> Array1<f64> {
        self.w_fc.dot(u) + &self.b_fc
    }

    /// Feed-forward + ReLU + L2 normalization of one fused vector.
    pub fn ffn_normalize(&self, h: &Array1<f64>) -> Array1<f64> {
        let a = (self.w_ffn.dot(h) + &self.b_ffn).mapv(|x| x.max(0.0));
        let norm = a.dot(&a).sqrt();
        a / (norm + NORM_EPSILON)
    }
}

/// Forward activations cached for backpropagation.
#[derive(Debug, Clone)]
pub struct SffActivations {
    pub mode: SffMode,
    /// Raw utterance embeddings (n x d).
    pub inputs: Array2<f64>,
    /// FC outputs (n x d); equals `inputs` in NoSff mode.
    pub v: Array2<f64>,
    /// Fused representations entering the feed-forward layer (n x d).
    pub h: Array2<f64>,
    /// Pre-ReLU feed-forward outputs (n x d).
    pub y: Array2<f64>,
    /// Post-ReLU, pre-normalization vectors (n x d).
    pub a: Array2<f64>,
    /// Final representations; each row has unit L2 norm or is exactly zero.
    pub r: Array2<f64>,
    fwd_cache: Option<LstmCache>,
    bwd_cache: Option<LstmCache>,
}

fn normalize_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut r = a.clone();
    for mut row in r.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm + NORM_EPSILON;
    }
    r
}

/// Gradient of row-wise L2 normalization: for r = a / (|a| + eps),
/// da = g/(|a|+eps) - a * (a.g) / (|a| (|a|+eps)^2); zero rows get zero.
fn normalize_rows_backward(a: &Array2<f64>, grad_r: &Array2<f64>) -> Array2<f64> {
    let mut grad_a = Array2::<f64>::zeros(a.dim());
    for t in 0..a.nrows() {
        let row = a.row(t);
        let g = grad_r.row(t);
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            continue;
        }
        let denom = norm + NORM_EPSILON;
        let coeff = row.dot(&g) / (norm * denom * denom);
        let out = &g / denom - &(&row * coeff);
        grad_a.row_mut(t).assign(&out);
    }
    grad_a
}

/// Run the fusion stack over a dialogue's embeddings (n x d).
pub fn sff_forward(params: &SffParams, embeddings: &Array2<f64>, mode: SffMode) -> SffActivations {
    let d = params.d();
    assert_eq!(
        embeddings.ncols(),
        d,
        "embedding width {} does not match model dimension {d}",
        embeddings.ncols()
    );
    let n = embeddings.nrows();
    assert!(n >= 1, "sff_forward requires at least one utterance");

    if mode == SffMode::NoSff {
        let r = normalize_rows(embeddings);
        return SffActivations {
            mode,
            inputs: embeddings.clone(),
            v: embeddings.clone(),
            h: embeddings.clone(),
            y: embeddings.clone(),
            a: embeddings.clone(),
            r,
            fwd_cache: None,
            bwd_cache: None,
        };
    }

    // Eq-style FC projection applied row-wise.
    let v = embeddings.dot(&params.w_fc.t()) + &params.b_fc;

    let (h, fwd_cache, bwd_cache) = if mode == SffMode::Full {
        let half = d / 2;
        let fwd_cache = lstm_forward(&params.fwd, &v);
        let reversed = reverse_rows(&v);
        let bwd_cache = lstm_forward(&params.bwd, &reversed);
        let mut h = Array2::<f64>::zeros((n, d));
        for t in 0..n {
            h.slice_mut(s![t, ..half]).assign(&fwd_cache.hidden.row(t));
            h.slice_mut(s![t, half..])
                .assign(&bwd_cache.hidden.row(n - 1 - t));
        }
        (h, Some(fwd_cache), Some(bwd_cache))
    } else {
        (v.clone(), None, None)
    };

    let y = h.dot(&params.w_ffn.t()) + &params.b_ffn;
    let a = y.mapv(|x| x.max(0.0));
    let r = normalize_rows(&a);

    SffActivations {
        mode,
        inputs: embeddings.clone(),
        v,
        h,
        y,
        a,
        r,
        fwd_cache,
        bwd_cache,
    }
}

fn reverse_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    let n = m.nrows();
    for t in 0..n {
        out.row_mut(t).assign(&m.row(n - 1 - t));
    }
    out
}

/// Exact gradients of the stack. Returns parameter gradients and the
/// gradient with respect to the input embeddings.
pub fn sff_backward(
    params: &SffParams,
    acts: &SffActivations,
    grad_r: &Array2<f64>,
) -> (SffParams, Array2<f64>) {
    assert_eq!(grad_r.dim(), acts.r.dim(), "grad_r shape mismatch");
    let mut grads = params.zeros_like();

    if acts.mode == SffMode::NoSff {
        let grad_inputs = normalize_rows_backward(&acts.a, grad_r);
        return (grads, grad_inputs);
    }

    let grad_a = normalize_rows_backward(&acts.a, grad_r);
    // ReLU mask on the pre-activation values.
    let grad_y = &grad_a * &acts.y.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });

    grads.w_ffn = grad_y.t().dot(&acts.h);
    grads.b_ffn = grad_y.sum_axis(Axis(0));
    let grad_h = grad_y.dot(&params.w_ffn);

    let grad_v = if acts.mode == SffMode::Full {
        let n = acts.inputs.nrows();
        let half = params.d() / 2;
        let fwd_cache = acts.fwd_cache.as_ref().expect("full mode caches fwd");
        let bwd_cache = acts.bwd_cache.as_ref().expect("full mode caches bwd");

        let dh_fwd = grad_h.slice(s![.., ..half]).to_owned();
        // The backward direction consumed the reversed sequence, so its
        // external gradient must be reversed to match its step order.
        let mut dh_bwd = Array2::<f64>::zeros((n, half));
        for t in 0..n {
            dh_bwd
                .row_mut(t)
                .assign(&grad_h.slice(s![n - 1 - t, half..]));
        }

        let (fwd_grads, dv_fwd) = lstm_backward(&params.fwd, fwd_cache, &dh_fwd);
        let (bwd_grads, dv_bwd_rev) = lstm_backward(&params.bwd, bwd_cache, &dh_bwd);
        grads.fwd = fwd_grads;
        grads.bwd = bwd_grads;
        dv_fwd + reverse_rows(&dv_bwd_rev)
    } else {
        grad_h
    };

    grads.w_fc = grad_v.t().dot(&acts.inputs);
    grads.b_fc = grad_v.sum_axis(Axis(0));
    let grad_inputs = grad_v.dot(&params.w_fc);

    (grads, grad_inputs)
}
