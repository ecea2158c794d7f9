//! Optimal assignment via the Hungarian algorithm with potentials, O(n^3).

use ndarray::Array2;

/// Minimum-cost assignment of rows to distinct columns of a cost matrix
/// with `rows <= cols`. Returns the column chosen for each row.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "cost matrix must have rows <= cols");
    assert!(n > 0, "cost matrix must be non-empty");

    // 1-indexed potentials; p[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path back.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum total weight of a one-to-one matching between the rows and columns
/// of a non-negative weight matrix (unmatched rows/columns contribute zero).
pub fn max_weight_matching(weights: &Array2<f64>) -> f64 {
    let (r, c) = weights.dim();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let side = r.max(c);
    // Pad to square and negate: min-cost on -w maximizes total weight.
    let mut cost = Array2::<f64>::zeros((side, side));
    for i in 0..r {
        for j in 0..c {
            cost[[i, j]] = -weights[[i, j]];
        }
    }
    let assignment = min_cost_assignment(&cost);
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        if i < r && j < c {
            total += weights[[i, j]];
        }
    }
    total
}
