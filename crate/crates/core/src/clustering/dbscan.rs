//! Density-based clustering. Noise points become singleton sessions so
//! every utterance ends up labeled.

use std::collections::VecDeque;

use ndarray::Array2;

use super::{ClusteringResult, Diagnostics};
use crate::corpus::SessionLabeling;
use crate::error::{Error, Result};

/// Standard DBSCAN over euclidean distance. The eps-neighborhood includes
/// the point itself; border points join the first core cluster that reaches
/// them in index order.
pub fn dbscan(points: &Array2<f64>, eps: f64, min_pts: usize) -> Result<ClusteringResult> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Validation("min_pts must be at least 1".into()));
    }
    let n = points.nrows();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                points
                    .row(i)
                    .iter()
                    .zip(points.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= eps2
            })
            .collect()
    };

    const UNLABELED: usize = usize::MAX;
    let mut labels = vec![UNLABELED; n];
    let mut next_cluster = 0usize;

    for i in 0..n {
        if labels[i] != UNLABELED {
            continue;
        }
        let hood = neighbors(i);
        if hood.len() < min_pts {
            continue; // tentatively noise; may be claimed as a border point
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = hood.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] != UNLABELED {
                continue;
            }
            labels[q] = cluster;
            let q_hood = neighbors(q);
            if q_hood.len() >= min_pts {
                queue.extend(q_hood);
            }
        }
    }

    // Every remaining noise point becomes its own singleton session.
    for label in labels.iter_mut() {
        if *label == UNLABELED {
            *label = next_cluster;
            next_cluster += 1;
        }
    }

    Ok(ClusteringResult {
        labels: SessionLabeling::from_raw(&labels),
        diagnostics: Diagnostics {
            iterations: 1,
            objective: next_cluster as f64,
            converged: true,
            objective_trace: vec![next_cluster as f64],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn two_dense_blobs_form_two_clusters() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut points = Array2::<f64>::zeros((16, 2));
        for i in 0..8 {
            points[[i, 0]] = rng.random_range(-0.3..0.3);
            points[[i, 1]] = rng.random_range(-0.3..0.3);
            points[[i + 8, 0]] = 10.0 + rng.random_range(-0.3..0.3);
            points[[i + 8, 1]] = 10.0 + rng.random_range(-0.3..0.3);
        }
        let result = dbscan(&points, 1.0, 3).unwrap();
        assert_eq!(result.labels.k(), 2);
        let labels = result.labels.labels();
        assert!(labels[..8].iter().all(|&l| l == labels[0]));
        assert!(labels[8..].iter().all(|&l| l == labels[8]));
    }

    #[test]
    fn isolated_point_becomes_singleton_session() {
        let mut points = Array2::<f64>::zeros((7, 2));
        for i in 0..6 {
            points[[i, 0]] = i as f64 * 0.1;
        }
        points[[6, 0]] = 100.0;
        let result = dbscan(&points, 0.5, 2).unwrap();
        let labels = result.labels.labels();
        // The far point sits alone in its own session.
        assert_eq!(labels[..6].iter().filter(|&&l| l == labels[6]).count(), 0);
        assert_eq!(labels.iter().filter(|&&l| l == labels[6]).count(), 1);
    }

    #[test]
    fn huge_eps_min_pts_one_gives_one_cluster() {
        let mut rng = StdRng::seed_from_u64(5);
        let points = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
        let result = dbscan(&points, 100.0, 1).unwrap();
        assert_eq!(result.labels.k(), 1);
    }

    #[test]
    fn parameter_validation() {
        let points = Array2::zeros((3, 2));
        assert!(dbscan(&points, 0.0, 2).is_err());
        assert!(dbscan(&points, 1.0, 0).is_err());
    }

    #[test]
    fn all_points_labeled() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..10 {
            let n = rng.random_range(2..20);
            let points = Array2::from_shape_fn((n, 2), |_| rng.random_range(-5.0..5.0));
            let result = dbscan(&points, 0.7, 3).unwrap();
            assert_eq!(result.labels.n(), n);
            let sizes = result.labels.session_sizes();
            assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }
}
