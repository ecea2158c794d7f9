//! Session-count prediction head: a unidirectional LSTM over the utterance
//! embeddings, final-state linear readout, and softmax over k = 1..K_max.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lstm::{lstm_backward, lstm_forward, outer, LstmCache, LstmParams};

/// LSTM (hidden size d) plus linear readout to K_max classes.
#[derive(Debug, Clone)]
pub struct ClusterHeadParams {
    pub lstm: LstmParams,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl ClusterHeadParams {
    pub fn init(d: usize, k_max: usize, rng: &mut impl Rng) -> Self {
        assert!(k_max >= 2, "K_max must be at least 2");
        let scale = 1.0 / (d as f64).sqrt();
        ClusterHeadParams {
            lstm: LstmParams::init(d, d, scale, rng),
            w_out: Array2::from_shape_fn((k_max, d), |_| rng.random_range(-scale..scale)),
            b_out: Array1::zeros(k_max),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ClusterHeadParams {
            lstm: self.lstm.zeros_like(),
            w_out: Array2::zeros(self.w_out.dim()),
            b_out: Array1::zeros(self.b_out.dim()),
        }
    }

    pub fn k_max(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn d(&self) -> usize {
        self.w_out.ncols()
    }
}

/// Probabilities over session counts k in 1..=K_max (class j is k = j+1).
#[derive(Debug, Clone)]
pub struct SessionCountDistribution {
    probs: Vec<f64>,
}

impl SessionCountDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(
                "session-count probabilities must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "session-count probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(SessionCountDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k_max(&self) -> usize {
        self.probs.len()
    }

    /// Probability of exactly k sessions.
    pub fn probability_of(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.probs.len() {
            return Err(Error::Validation(format!(
                "session count {k} outside 1..={}",
                self.probs.len()
            )));
        }
        Ok(self.probs[k - 1])
    }
}

/// Cached forward state for one dialogue.
#[derive(Debug, Clone)]
pub struct HeadCache {
    lstm_cache: LstmCache,
    pub final_hidden: Array1<f64>,
    pub probs: Vec<f64>,
}

/// LSTM over the embeddings, final hidden state through the linear layer,
/// softmax over K_max classes.
pub fn head_forward(
    params: &ClusterHeadParams,
    embeddings: &Array2<f64>,
) -> (SessionCountDistribution, HeadCache) {
    let n = embeddings.nrows();
    assert!(n >= 1, "head_forward requires at least one utterance");
    let cache = lstm_forward(&params.lstm, embeddings);
    let final_hidden = cache.hidden.row(n - 1).to_owned();
    let logits = params.w_out.dot(&final_hidden) + &params.b_out;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let dist = SessionCountDistribution::new(probs.clone())
        .expect("softmax output is a valid distribution");
    (
        dist,
        HeadCache {
            lstm_cache: cache,
            final_hidden,
            probs,
        },
    )
}

/// Cross-entropy against the gold session count: -log P(y = k_gold).
pub fn head_loss(dist: &SessionCountDistribution, k_gold: usize) -> Result<f64> {
    let p = dist.probability_of(k_gold)?;
    Ok(-p.ln())
}

/// Argmax session count, ties broken toward smaller k.
pub fn predict_k(dist: &SessionCountDistribution) -> usize {
    let mut best = 0usize;
    for (j, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = j;
        }
    }
    best + 1
}

/// Gradients of -log P(k_gold) with respect to the head parameters and the
/// input embeddings.
pub fn head_backward(
    params: &ClusterHeadParams,
    cache: &HeadCache,
    k_gold: usize,
) -> Result<(ClusterHeadParams, Array2<f64>)> {
    if k_gold == 0 || k_gold > params.k_max() {
        return Err(Error::Validation(format!(
            "gold session count {k_gold} outside 1..={}",
            params.k_max()
        )));
    }
    let mut grads = params.zeros_like();
    let mut dlogits = Array1::from(cache.probs.clone());
    dlogits[k_gold - 1] -= 1.0;

    grads.w_out = outer(dlogits.view(), cache.final_hidden.view());
    grads.b_out = dlogits.clone();

    let n = cache.lstm_cache.xs.nrows();
    let mut dh_ext = Array2::<f64>::zeros((n, params.d()));
    dh_ext.row_mut(n - 1).assign(&params.w_out.t().dot(&dlogits));

    let (lstm_grads, dxs) = lstm_backward(&params.lstm, &cache.lstm_cache, &dh_ext);
    grads.lstm = lstm_grads;
    Ok((grads, dxs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_head(d: usize, k_max: usize, seed: u64) -> ClusterHeadParams {
        let mut rng = StdRng::seed_from_u64(seed);
        ClusterHeadParams::init(d, k_max, &mut rng)
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_readout_gives_uniform_distribution() {
        let mut head = random_head(6, 4, 0);
        head.w_out = Array2::zeros((4, 6));
        head.b_out = Array1::zeros(4);
        let (dist, _) = head_forward(&head, &random_input(5, 6, 1));
        for &p in dist.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert_eq!(predict_k(&dist), 1); // uniform ties break toward k = 1
    }

    #[test]
    fn huge_logit_saturates() {
        let mut head = random_head(6, 4, 2);
        head.w_out = Array2::zeros((4, 6));
        head.b_out = Array1::from(vec![0.0, 50.0, 0.0, 0.0]);
        let (dist, _) = head_forward(&head, &random_input(3, 6, 3));
        assert!(dist.probs()[1] > 1.0 - 1e-12);
        assert_eq!(predict_k(&dist), 2);
    }

    #[test]
    fn distribution_sums_to_one_for_random_inputs() {
        for seed in 0..10u64 {
            let head = random_head(8, 5, seed);
            let (dist, _) = head_forward(&head, &random_input(4, 8, seed + 50));
            let sum: f64 = dist.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn head_loss_values() {
        let sure = SessionCountDistribution::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(head_loss(&sure, 2).unwrap(), 0.0);

        let uniform = SessionCountDistribution::new(vec![0.25; 4]).unwrap();
        assert!((head_loss(&uniform, 3).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        let half = SessionCountDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!((head_loss(&half, 1).unwrap() - 2.0f64.ln()).abs() < 1e-12);

        assert!(head_loss(&uniform, 0).is_err());
        assert!(head_loss(&uniform, 5).is_err());
    }

    #[test]
    fn predict_k_tie_breaks_toward_smaller() {
        let d = SessionCountDistribution::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(predict_k(&d), 1);
        let d2 = SessionCountDistribution::new(vec![0.1, 0.7, 0.1, 0.1]).unwrap();
        assert_eq!(predict_k(&d2), 2);
    }

    #[test]
    fn predict_k_invariant_under_monotone_logit_transforms() {
        let head = random_head(6, 4, 9);
        let input = random_input(5, 6, 10);
        let (dist, cache) = head_forward(&head, &input);
        let base = predict_k(&dist);

        // Scaling and shifting logits preserves the argmax.
        let logits = head.w_out.dot(&cache.final_hidden) + &head.b_out;
        let transformed: Vec<f64> = logits.iter().map(|&z| 3.0 * z + 11.0).collect();
        let max = transformed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = transformed.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let dist2 =
            SessionCountDistribution::new(exps.iter().map(|e| e / sum).collect()).unwrap();
        assert_eq!(predict_k(&dist2), base);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_certainty() {
        let sure = SessionCountDistribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(head_loss(&sure, 1).unwrap(), 0.0);
        let almost = SessionCountDistribution::new(vec![0.999, 0.001]).unwrap();
        assert!(head_loss(&almost, 1).unwrap() > 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 6;
        let k_max = 4;
        let n = 4;
        for seed in 0..3u64 {
            let params = random_head(d, k_max, 20 + seed);
            let input = random_input(n, d, 40 + seed);
            let k_gold = 1 + (seed as usize % k_max);

            let loss = |p: &ClusterHeadParams, x: &Array2<f64>| -> f64 {
                let (dist, _) = head_forward(p, x);
                head_loss(&dist, k_gold).unwrap()
            };

            let (_, cache) = head_forward(&params, &input);
            let (grads, dxs) = head_backward(&params, &cache, k_gold).unwrap();

            let step = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

            let mut p = params.clone();
            // Probe the readout, the LSTM weights, and the inputs.
            for idx in [(0usize, 0usize), (k_max - 1, d - 1)] {
                let orig = p.w_out[[idx.0, idx.1]];
                p.w_out[[idx.0, idx.1]] = orig + step;
                let up = loss(&p, &input);
                p.w_out[[idx.0, idx.1]] = orig - step;
                let down = loss(&p, &input);
                p.w_out[[idx.0, idx.1]] = orig;
                let numeric = (up - down) / (2.0 * step);
                assert!(
                    rel(grads.w_out[[idx.0, idx.1]], numeric) < 1e-4
                        || (grads.w_out[[idx.0, idx.1]] - numeric).abs() < 1e-9
                );
            }
            for flat in [0usize, d, 3 * d + 1] {
                let orig = p.lstm.w.as_slice().unwrap()[flat];
                p.lstm.w.as_slice_mut().unwrap()[flat] = orig + step;
                let up = loss(&p, &input);
                p.lstm.w.as_slice_mut().unwrap()[flat] = orig - step;
                let down = loss(&p, &input);
                p.lstm.w.as_slice_mut().unwrap()[flat] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grads.lstm.w.as_slice().unwrap()[flat];
                assert!(
                    rel(analytic, numeric) < 1e-4 || (analytic - numeric).abs() < 1e-9,
                    "lstm.w[{flat}]: {analytic} vs {numeric}"
                );
            }
            let mut x = input.clone();
            for flat in [0usize, n * d / 2, n * d - 1] {
                let orig = x.as_slice().unwrap()[flat];
                x.as_slice_mut().unwrap()[flat] = orig + step;
                let up = loss(&params, &x);
                x.as_slice_mut().unwrap()[flat] = orig - step;
                let down = loss(&params, &x);
                x.as_slice_mut().unwrap()[flat] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = dxs.as_slice().unwrap()[flat];
                assert!(
                    rel(analytic, numeric) < 1e-4 || (analytic - numeric).abs() < 1e-9,
                    "dx[{flat}]: {analytic} vs {numeric}"
                );
            }
        }
    }
}
