//! Affinity propagation: exemplar election by responsibility/availability
//! message passing over negative squared euclidean similarities.

use ndarray::Array2;

use super::{ClusteringResult, Diagnostics};
use crate::corpus::SessionLabeling;
use crate::error::{Error, Result};

/// Message-passing controls. Preferences (self-similarities) are set to the
/// median of the off-diagonal similarities. Defaults follow the published
/// convention for damping 0.9: at that damping, messages move 10% per
/// iteration, so a short convergence window misreads the transient as
/// converged and under-produces exemplars.
#[derive(Debug, Clone, Copy)]
pub struct ApOptions {
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            damping: 0.9,
            max_iterations: 1000,
            convergence_window: 100,
        }
    }
}

/// Affinity propagation with the default options.
pub fn affinity_propagation(points: &Array2<f64>) -> Result<ClusteringResult> {
    affinity_propagation_with(points, &ApOptions::default())
}

/// Similarity matrix with median-preference diagonal.
fn similarity_matrix(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut s = Array2::<f64>::zeros((n, n));
    let mut off_diagonal = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            s[[i, j]] = -d2;
            off_diagonal.push(-d2);
        }
    }
    off_diagonal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = off_diagonal.len();
    let preference = if m % 2 == 1 {
        off_diagonal[m / 2]
    } else {
        0.5 * (off_diagonal[m / 2 - 1] + off_diagonal[m / 2])
    };
    for k in 0..n {
        s[[k, k]] = preference;
    }
    s
}

pub fn affinity_propagation_with(
    points: &Array2<f64>,
    options: &ApOptions,
) -> Result<ClusteringResult> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Validation(
            "affinity propagation requires at least 2 points".into(),
        ));
    }
    if !(0.0..1.0).contains(&options.damping) {
        return Err(Error::Config(format!(
            "damping must be in [0, 1), got {}",
            options.damping
        )));
    }
    let s = similarity_matrix(points);
    let lam = options.damping;

    let mut r = Array2::<f64>::zeros((n, n));
    let mut a = Array2::<f64>::zeros((n, n));
    let mut previous_exemplars: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for _ in 0..options.max_iterations {
        iterations += 1;

        // Responsibilities from the current availabilities: r(i,k) =
        // s(i,k) - max_{k' != k} (a(i,k') + s(i,k')).
        for i in 0..n {
            let mut max1 = f64::NEG_INFINITY;
            let mut max2 = f64::NEG_INFINITY;
            let mut arg1 = 0usize;
            for k in 0..n {
                let v = a[[i, k]] + s[[i, k]];
                if v > max1 {
                    max2 = max1;
                    max1 = v;
                    arg1 = k;
                } else if v > max2 {
                    max2 = v;
                }
            }
            for k in 0..n {
                let competing = if k == arg1 { max2 } else { max1 };
                let fresh = s[[i, k]] - competing;
                r[[i, k]] = lam * r[[i, k]] + (1.0 - lam) * fresh;
            }
        }

        // Availabilities from the new responsibilities.
        for k in 0..n {
            let positive_sum: f64 = (0..n)
                .filter(|&i| i != k)
                .map(|i| r[[i, k]].max(0.0))
                .sum();
            for i in 0..n {
                let fresh = if i == k {
                    positive_sum
                } else {
                    (r[[k, k]] + positive_sum - r[[i, k]].max(0.0)).min(0.0)
                };
                a[[i, k]] = lam * a[[i, k]] + (1.0 - lam) * fresh;
            }
        }

        let exemplars: Vec<usize> = (0..n).filter(|&k| r[[k, k]] + a[[k, k]] > 0.0).collect();
        if exemplars == previous_exemplars && !exemplars.is_empty() {
            stable += 1;
            if stable >= options.convergence_window {
                converged = true;
                break;
            }
        } else {
            stable = 0;
            previous_exemplars = exemplars;
        }
    }

    let exemplars: Vec<usize> = (0..n).filter(|&k| r[[k, k]] + a[[k, k]] > 0.0).collect();
    let (assignment, net_similarity) = assign_to_exemplars(&s, &exemplars, n);

    Ok(ClusteringResult {
        labels: SessionLabeling::from_raw(&assignment),
        diagnostics: Diagnostics {
            iterations,
            objective: net_similarity,
            converged,
            objective_trace: vec![net_similarity],
        },
    })
}

/// Each point joins its most similar exemplar; exemplars claim themselves.
/// No exemplars at all collapses everything into one cluster.
fn assign_to_exemplars(s: &Array2<f64>, exemplars: &[usize], n: usize) -> (Vec<usize>, f64) {
    if exemplars.is_empty() {
        return (vec![0; n], f64::NEG_INFINITY);
    }
    let mut assignment = vec![0usize; n];
    let mut net = 0.0;
    for i in 0..n {
        if exemplars.contains(&i) {
            assignment[i] = i;
            net += s[[i, i]];
            continue;
        }
        let mut best = exemplars[0];
        for &k in &exemplars[1..] {
            if s[[i, k]] > s[[i, best]] {
                best = k;
            }
        }
        assignment[i] = best;
        net += s[[i, best]];
    }
    (assignment, net)
}
