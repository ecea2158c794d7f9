//! Diagonal-covariance Gaussian mixture fit by EM, initialized from k-means.

use ndarray::Array2;

use super::{kmeans, ClusteringResult, Diagnostics};
use crate::corpus::SessionLabeling;
use crate::error::Result;

const MAX_ITERATIONS: usize = 100;
const LL_TOLERANCE: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Mixture weights, means, and diagonal variances.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

impl GmmModel {
    /// Log density of one point under one component (diagonal Gaussian).
    fn log_component_density(&self, x: &[f64], c: usize) -> f64 {
        let mut acc = 0.0;
        for j in 0..x.len() {
            let var = self.variances[[c, j]];
            let diff = x[j] - self.means[[c, j]];
            acc += -0.5 * (LN_2PI + var.ln()) - diff * diff / (2.0 * var);
        }
        acc
    }

    /// Posterior responsibilities of every component for one point.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let k = self.weights.len();
        let logs: Vec<f64> = (0..k)
            .map(|c| self.weights[c].ln() + self.log_component_density(x, c))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    fn log_likelihood_of(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.weights.len())
            .map(|c| self.weights[c].ln() + self.log_component_density(x, c))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
    }
}

/// Fit the mixture and return both the model and the hard labeling.
pub fn gmm_fit(points: &Array2<f64>, k: usize, seed: u64) -> Result<(GmmModel, ClusteringResult)> {
    let n = points.nrows();
    let d = points.ncols();
    let init = kmeans(points, k, seed)?;
    let init_labels = init.labels.labels();

    // Initialize parameters from the k-means partition.
    let mut model = GmmModel {
        weights: vec![0.0; k],
        means: Array2::zeros((k, d)),
        variances: Array2::zeros((k, d)),
    };
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let c = init_labels[i];
        counts[c] += 1;
        for j in 0..d {
            model.means[[c, j]] += points[[i, j]];
        }
    }
    for c in 0..k {
        model.weights[c] = counts[c] as f64 / n as f64;
        for j in 0..d {
            model.means[[c, j]] /= counts[c] as f64;
        }
    }
    for i in 0..n {
        let c = init_labels[i];
        for j in 0..d {
            let diff = points[[i, j]] - model.means[[c, j]];
            model.variances[[c, j]] += diff * diff;
        }
    }
    for c in 0..k {
        for j in 0..d {
            model.variances[[c, j]] =
                (model.variances[[c, j]] / counts[c] as f64).max(VARIANCE_FLOOR);
        }
    }

    let mut responsibilities = Array2::<f64>::zeros((n, k));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        // E step.
        let mut ll = 0.0;
        for i in 0..n {
            let x: Vec<f64> = points.row(i).to_vec();
            ll += model.log_likelihood_of(&x);
            let resp = model.responsibilities(&x);
            for c in 0..k {
                responsibilities[[i, c]] = resp[c];
            }
        }
        if let Some(&prev) = trace.last() {
            debug_assert!(ll >= prev - 1e-8, "log-likelihood decreased: {prev} -> {ll}");
            if ll - prev < LL_TOLERANCE {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        // M step.
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| responsibilities[[i, c]]).sum::<f64>().max(1e-12);
            model.weights[c] = nk / n as f64;
            for j in 0..d {
                let mean = (0..n)
                    .map(|i| responsibilities[[i, c]] * points[[i, j]])
                    .sum::<f64>()
                    / nk;
                model.means[[c, j]] = mean;
            }
            for j in 0..d {
                let var = (0..n)
                    .map(|i| {
                        let diff = points[[i, j]] - model.means[[c, j]];
                        responsibilities[[i, c]] * diff * diff
                    })
                    .sum::<f64>()
                    / nk;
                model.variances[[c, j]] = var.max(VARIANCE_FLOOR);
            }
        }
    }

    // Hard assignment by argmax responsibility, ties toward lower index.
    let mut assignment = vec![0usize; n];
    for i in 0..n {
        let mut best = 0;
        for c in 1..k {
            if responsibilities[[i, c]] > responsibilities[[i, best]] {
                best = c;
            }
        }
        assignment[i] = best;
    }

    let objective = *trace.last().expect("at least one EM iteration ran");
    Ok((
        model,
        ClusteringResult {
            labels: SessionLabeling::from_raw(&assignment),
            diagnostics: Diagnostics {
                iterations,
                objective,
                converged,
                objective_trace: trace,
            },
        },
    ))
}

/// Diagonal-covariance EM clustering; labels are argmax responsibilities.
pub fn gmm(points: &Array2<f64>, k: usize, seed: u64) -> Result<ClusteringResult> {
    gmm_fit(points, k, seed).map(|(_, result)| result)
}
