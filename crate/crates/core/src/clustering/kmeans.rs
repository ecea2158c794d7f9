//! Lloyd's algorithm with k-means++ seeding, restarts, and empty-cluster
//! repair.

use ndarray::Array2;
use rand::{Rng, SeedableRng};

use super::{ClusteringResult, Diagnostics};
use crate::corpus::SessionLabeling;
use crate::error::{Error, Result};

const RESTARTS: usize = 10;
const MAX_ITERATIONS: usize = 300;

/// Partition `points` into k clusters; the best of 10 seeded restarts by
/// inertia is kept. Nearest-centroid ties break toward the lowest centroid
/// index, and an emptied cluster steals the farthest point of the largest
/// cluster.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<ClusteringResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Validation(format!(
            "kmeans requires 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut best: Option<(f64, ClusteringResult)> = None;
    for _ in 0..RESTARTS {
        let result = lloyd(points, k, &mut rng);
        let inertia = result.diagnostics.objective;
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, result));
        }
    }
    Ok(best.expect("at least one restart ran").1)
}

fn squared_distance(points: &Array2<f64>, i: usize, centroid: &[f64]) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroid)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn kmeanspp_init(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row(rng.random_range(0..n)).to_vec());
    let mut dist2 = vec![0.0f64; n];
    while centroids.len() < k {
        let last = centroids.last().unwrap();
        for i in 0..n {
            let d = squared_distance(points, i, last);
            if centroids.len() == 1 || d < dist2[i] {
                dist2[i] = d;
            }
        }
        let total: f64 = dist2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            rng.random_range(0..n)
        };
        centroids.push(points.row(chosen).to_vec());
    }
    centroids
}

fn lloyd(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> ClusteringResult {
    let n = points.nrows();
    let d = points.ncols();
    let mut centroids = kmeanspp_init(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        // Assignment step; ties go to the lowest centroid index.
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = squared_distance(points, i, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let dist = squared_distance(points, i, centroid);
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if assignment[i] != best_c {
                changed = true;
                assignment[i] = best_c;
            }
            inertia += best_d;
        }

        // Repair empty clusters by stealing the farthest point from the
        // largest cluster; the stolen point becomes the cluster's centroid.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&c| counts[c]).unwrap();
            let victim = (0..n)
                .filter(|&i| assignment[i] == largest)
                .max_by(|&a, &b| {
                    squared_distance(points, a, &centroids[largest])
                        .partial_cmp(&squared_distance(points, b, &centroids[largest]))
                        .unwrap()
                })
                .expect("largest cluster is non-empty");
            inertia -= squared_distance(points, victim, &centroids[largest]);
            assignment[victim] = empty;
            centroids[empty] = points.row(victim).to_vec();
            counts[largest] -= 1;
            counts[empty] += 1;
            changed = true;
        }

        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev + 1e-9,
                "inertia increased: {prev} -> {inertia}"
            );
        }
        trace.push(inertia);

        if !changed {
            converged = true;
            break;
        }

        // Update step: centroids move to their cluster means.
        let mut sums = vec![vec![0.0f64; d]; k];
        for i in 0..n {
            for j in 0..d {
                sums[assignment[i]][j] += points[[i, j]];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }

    // Final inertia against the converged centroids.
    let objective: f64 = (0..n)
        .map(|i| squared_distance(points, i, &centroids[assignment[i]]))
        .sum();

    ClusteringResult {
        labels: SessionLabeling::from_raw(&assignment),
        diagnostics: Diagnostics {
            iterations,
            objective,
            converged,
            objective_trace: trace,
        },
    }
}
