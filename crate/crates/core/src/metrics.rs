//! The five disentanglement metrics: NMI, ARI, Loc3, one-to-one overlap,
//! and Shen-F, plus corpus-level aggregation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_matching;
use crate::corpus::SessionLabeling;
use crate::error::{Error, Result};

/// The five metric values for one labeling pair or a corpus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub nmi: f64,
    pub ari: f64,
    pub loc3: f64,
    pub one_to_one: f64,
    pub shen_f: f64,
}

/// Corpus-level metric report: unweighted means plus the per-dialogue values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus: MetricValues,
    pub per_dialogue: Vec<MetricValues>,
}

fn check_lengths(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<()> {
    if gold.n() != pred.n() {
        return Err(Error::Validation(format!(
            "labeling length mismatch: gold has {}, pred has {}",
            gold.n(),
            pred.n()
        )));
    }
    Ok(())
}

/// Contingency counts n_ij plus the marginals of both labelings.
fn contingency(
    gold: &SessionLabeling,
    pred: &SessionLabeling,
) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let mut table = Array2::<f64>::zeros((gold.k(), pred.k()));
    for (&g, &p) in gold.labels().iter().zip(pred.labels()) {
        table[[g, p]] += 1.0;
    }
    (table, gold.session_sizes(), pred.session_sizes())
}

fn entropy(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    sizes
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| {
            let p = m as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the label
/// entropies. Both single-cluster: 1.0; exactly one zero-entropy side: 0.0.
pub fn nmi(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<f64> {
    check_lengths(gold, pred)?;
    // Canonical labelings describe the same partition iff they are equal.
    if gold.labels() == pred.labels() {
        return Ok(1.0);
    }
    let n = gold.n();
    let (table, gold_sizes, pred_sizes) = contingency(gold, pred);
    let h_gold = entropy(&gold_sizes, n);
    let h_pred = entropy(&pred_sizes, n);
    if h_gold == 0.0 && h_pred == 0.0 {
        return Ok(1.0);
    }
    if h_gold == 0.0 || h_pred == 0.0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..gold.k() {
        for j in 0..pred.k() {
            let nij = table[[i, j]];
            if nij > 0.0 {
                let pij = nij / nf;
                let pi = gold_sizes[i] as f64 / nf;
                let qj = pred_sizes[j] as f64 / nf;
                mi += pij * (pij / (pi * qj)).ln();
            }
        }
    }
    // Clamp away float residue so bounds hold exactly.
    Ok((mi / (0.5 * (h_gold + h_pred))).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand Index over utterance pairs; 1.0 when the adjustment
/// denominator vanishes (which only happens for identical partitions).
pub fn ari(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<f64> {
    check_lengths(gold, pred)?;
    if gold.labels() == pred.labels() {
        return Ok(1.0);
    }
    let n = gold.n() as f64;
    let (table, gold_sizes, pred_sizes) = contingency(gold, pred);
    let index: f64 = table.iter().map(|&nij| comb2(nij)).sum();
    let sum_gold: f64 = gold_sizes.iter().map(|&m| comb2(m as f64)).sum();
    let sum_pred: f64 = pred_sizes.iter().map(|&m| comb2(m as f64)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_gold * sum_pred / total;
    let max = 0.5 * (sum_gold + sum_pred);
    if (max - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Fraction of index pairs within distance 3 whose same/different-session
/// status agrees between gold and prediction.
pub fn loc3(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<f64> {
    check_lengths(gold, pred)?;
    let n = gold.n();
    if n < 2 {
        return Err(Error::Validation(
            "loc3 requires at least 2 utterances".into(),
        ));
    }
    let g = gold.labels();
    let p = pred.labels();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n.min(i + 4) {
            total += 1;
            if (g[i] == g[j]) == (p[i] == p[j]) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / total as f64)
}

/// Best one-to-one matching of gold sessions to predicted sessions, scored
/// by matched utterances over n.
pub fn one_to_one(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<f64> {
    check_lengths(gold, pred)?;
    let (table, _, _) = contingency(gold, pred);
    Ok(max_weight_matching(&table) / gold.n() as f64)
}

/// Gold-session-weighted best harmonic overlap against predicted sessions:
/// F = sum_i (n_i/n) * max_j 2*n_ij / (n_i + n_j).
pub fn shen_f(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<f64> {
    check_lengths(gold, pred)?;
    if gold.labels() == pred.labels() {
        return Ok(1.0);
    }
    let n = gold.n() as f64;
    let (table, gold_sizes, pred_sizes) = contingency(gold, pred);
    let mut f = 0.0;
    for i in 0..gold.k() {
        let ni = gold_sizes[i] as f64;
        let best = (0..pred.k())
            .map(|j| 2.0 * table[[i, j]] / (ni + pred_sizes[j] as f64))
            .fold(0.0f64, f64::max);
        f += ni / n * best;
    }
    Ok(f)
}

/// All five metrics for one (gold, pred) pair.
pub fn evaluate_pair(gold: &SessionLabeling, pred: &SessionLabeling) -> Result<MetricValues> {
    Ok(MetricValues {
        nmi: nmi(gold, pred)?,
        ari: ari(gold, pred)?,
        loc3: loc3(gold, pred)?,
        one_to_one: one_to_one(gold, pred)?,
        shen_f: shen_f(gold, pred)?,
    })
}

/// Per-dialogue metrics and their unweighted mean across dialogues.
pub fn evaluate_corpus(pairs: &[(SessionLabeling, SessionLabeling)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("evaluate_corpus on empty input".into()));
    }
    let per_dialogue: Vec<MetricValues> = pairs
        .iter()
        .map(|(gold, pred)| evaluate_pair(gold, pred))
        .collect::<Result<_>>()?;
    let m = per_dialogue.len() as f64;
    let corpus = MetricValues {
        nmi: per_dialogue.iter().map(|v| v.nmi).sum::<f64>() / m,
        ari: per_dialogue.iter().map(|v| v.ari).sum::<f64>() / m,
        loc3: per_dialogue.iter().map(|v| v.loc3).sum::<f64>() / m,
        one_to_one: per_dialogue.iter().map(|v| v.one_to_one).sum::<f64>() / m,
        shen_f: per_dialogue.iter().map(|v| v.shen_f).sum::<f64>() / m,
    };
    Ok(MetricReport {
        corpus,
        per_dialogue,
    })
}
