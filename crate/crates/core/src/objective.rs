//! Pairwise euclidean margin contrastive loss over fused representations,
//! and the total-loss combination with the session-count head.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::SessionLabeling;
use crate::error::{Error, Result};

/// A pair of utterance indices with its similarity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    /// False when both utterances share a session, true otherwise.
    pub dissimilar: bool,
}

/// How per-pair losses are combined within one dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Sum
    }
}

/// Margin, head weight, and reduction for the training objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub gamma: f64,
    pub reduction: Reduction,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            margin: 1.0,
            gamma: 0.1,
            reduction: Reduction::Sum,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// All n(n-1)/2 index pairs with i < j; a pair is similar when the gold
/// labels agree.
pub fn pair_labels(gold: &SessionLabeling) -> Vec<PairLabel> {
    let labels = gold.labels();
    let n = labels.len();
    let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push(PairLabel {
                i,
                j,
                dissimilar: labels[i] != labels[j],
            });
        }
    }
    pairs
}

/// Euclidean distance between two representations.
pub fn pair_distance(r_i: ArrayView1<f64>, r_j: ArrayView1<f64>) -> f64 {
    r_i.iter()
        .zip(r_j.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Margin contrastive loss for one pair at distance d:
/// similar pairs pay d^2/2, dissimilar ones pay max(0, m - d)^2 / 2.
pub fn pair_loss(distance: f64, dissimilar: bool, margin: f64) -> f64 {
    debug_assert!(distance >= 0.0 && margin > 0.0);
    if dissimilar {
        let hinge = (margin - distance).max(0.0);
        0.5 * hinge * hinge
    } else {
        0.5 * distance * distance
    }
}

/// Sum (or mean) of the pair losses over every pair of a dialogue, plus the
/// exact gradient with respect to the representations. The subgradient at
/// d = 0 for dissimilar pairs is taken as zero.
pub fn contrastive_loss(
    r: &Array2<f64>,
    gold: &SessionLabeling,
    config: &ContrastiveConfig,
) -> Result<(f64, Array2<f64>)> {
    config.validate()?;
    if r.nrows() != gold.n() {
        return Err(Error::Validation(format!(
            "representation count {} does not match labeling length {}",
            r.nrows(),
            gold.n()
        )));
    }
    let pairs = pair_labels(gold);
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(r.dim());
    for pair in &pairs {
        let ri = r.row(pair.i);
        let rj = r.row(pair.j);
        let d = pair_distance(ri, rj);
        loss += pair_loss(d, pair.dissimilar, config.margin);
        // dL/dd * dd/dr_i, with the difference direction folded in so the
        // d = 0 similar case needs no division.
        if !pair.dissimilar {
            // dL/dr_i = (r_i - r_j), symmetric for r_j.
            let diff = &ri.to_owned() - &rj;
            let mut gi = grad.row_mut(pair.i);
            gi += &diff;
            let mut gj = grad.row_mut(pair.j);
            gj -= &diff;
        } else if d > 0.0 && d < config.margin {
            let scale = -(config.margin - d) / d;
            let diff = (&ri.to_owned() - &rj) * scale;
            let mut gi = grad.row_mut(pair.i);
            gi += &diff;
            let mut gj = grad.row_mut(pair.j);
            gj -= &diff;
        }
    }
    if config.reduction == Reduction::Mean && !pairs.is_empty() {
        let inv = 1.0 / pairs.len() as f64;
        loss *= inv;
        grad *= inv;
    }
    Ok((loss, grad))
}

/// Total training loss: contrastive plus gamma-weighted head loss.
pub fn total_loss(contrastive: f64, head: f64, gamma: f64) -> f64 {
    contrastive + gamma * head
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::prelude::*;

    fn lab(raw: &[usize]) -> SessionLabeling {
        SessionLabeling::from_raw(raw)
    }

    #[test]
    fn pair_labels_enumeration() {
        let pairs = pair_labels(&lab(&[0, 0, 1]));
        assert_eq!(
            pairs,
            vec![
                PairLabel { i: 0, j: 1, dissimilar: false },
                PairLabel { i: 0, j: 2, dissimilar: true },
                PairLabel { i: 1, j: 2, dissimilar: true },
            ]
        );

        let same = pair_labels(&lab(&[0, 0, 0, 0]));
        assert_eq!(same.len(), 6);
        assert!(same.iter().all(|p| !p.dissimilar));

        assert!(pair_labels(&lab(&[0])).is_empty());
    }

    #[test]
    fn pair_distance_examples() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(pair_distance(m.row(0), m.row(0)), 0.0);
        assert!((pair_distance(m.row(0), m.row(1)) - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((pair_distance(m.row(0), m.row(2)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pair_loss_examples() {
        assert!((pair_loss(0.8, false, 1.0) - 0.32).abs() < 1e-12);
        assert!((pair_loss(0.3, true, 1.0) - 0.245).abs() < 1e-12);
        assert_eq!(pair_loss(1.2, true, 1.0), 0.0);
    }

    #[test]
    fn pair_loss_is_continuous_at_the_margin() {
        let m = 1.0;
        let eps = 1e-9;
        let below = pair_loss(m - eps, true, m);
        let above = pair_loss(m + eps, true, m);
        assert!(below < 1e-15 && above == 0.0);
    }

    #[test]
    fn identical_similar_rows_give_zero_loss_and_grad() {
        let r = arr2(&[[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]);
        let (loss, grad) =
            contrastive_loss(&r, &lab(&[0, 0, 0]), &ContrastiveConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn separated_clusters_at_margin_give_zero_loss() {
        // Two clusters of identical unit vectors at distance sqrt(2) >= m = 1.
        let r = arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let (loss, grad) =
            contrastive_loss(&r, &lab(&[0, 0, 1, 1]), &ContrastiveConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_nonnegative_for_random_inputs() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let r = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let (loss, _) =
                contrastive_loss(&r, &lab(&labels), &ContrastiveConfig::default()).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn mean_reduction_scales_by_pair_count() {
        let r = arr2(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
        let gold = lab(&[0, 1, 0]);
        let sum_cfg = ContrastiveConfig::default();
        let mean_cfg = ContrastiveConfig {
            reduction: Reduction::Mean,
            ..Default::default()
        };
        let (ls, gs) = contrastive_loss(&r, &gold, &sum_cfg).unwrap();
        let (lm, gm) = contrastive_loss(&r, &gold, &mean_cfg).unwrap();
        assert!((ls / 3.0 - lm).abs() < 1e-12);
        for (a, b) in gs.iter().zip(gm.iter()) {
            assert!((a / 3.0 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = ContrastiveConfig::default();
        for seed in 0..5u64 {
            let mut rng = StdRng::seed_from_u64(100 + seed);
            let n = 4;
            let d = 8;
            let mut r = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let gold = lab(&labels);
            let (_, grad) = contrastive_loss(&r, &gold, &cfg).unwrap();

            let step = 1e-5;
            for flat in 0..(n * d) {
                let orig = r.as_slice().unwrap()[flat];
                r.as_slice_mut().unwrap()[flat] = orig + step;
                let up = contrastive_loss(&r, &gold, &cfg).unwrap().0;
                r.as_slice_mut().unwrap()[flat] = orig - step;
                let down = contrastive_loss(&r, &gold, &cfg).unwrap().0;
                r.as_slice_mut().unwrap()[flat] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grad.as_slice().unwrap()[flat];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "grad[{flat}] seed {seed}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn margin_of_two_or_more_penalizes_non_antipodal_unit_vectors() {
        // Unit-vector distances live in [0, 2]; with m = 2 every dissimilar
        // pair short of antipodal carries positive loss.
        let cfg = ContrastiveConfig {
            margin: 2.0,
            ..Default::default()
        };
        let r = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let (loss, _) = contrastive_loss(&r, &lab(&[0, 1]), &cfg).unwrap();
        assert!(loss > 0.0);

        let antipodal = arr2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let (zero, _) = contrastive_loss(&antipodal, &lab(&[0, 1]), &cfg).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn total_loss_combination() {
        assert!((total_loss(2.0, 0.5, 0.1) - 2.05).abs() < 1e-12);
        assert_eq!(total_loss(3.25, 0.0, 0.7), 3.25);
        assert_eq!(total_loss(0.0, 0.0, 0.1), 0.0);
    }

    #[test]
    fn invalid_margin_is_config_error() {
        let cfg = ContrastiveConfig {
            margin: 0.0,
            ..Default::default()
        };
        let r = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(contrastive_loss(&r, &lab(&[0, 1]), &cfg).is_err());
    }
}
