//! Clustering backends turning per-dialogue representations into predicted
//! session labels, plus the end-to-end disentangle entry point.

mod affinity;
mod dbscan;
mod gmm;
mod kmeans;

pub use affinity::{affinity_propagation, affinity_propagation_with, ApOptions};
pub use dbscan::dbscan;
pub use gmm::{gmm, gmm_fit, GmmModel};
pub use kmeans::kmeans;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, SessionLabeling};
use crate::encoder::PrecomputedEmbeddings;
use crate::error::{Error, Result};
use crate::model::Model;

/// Convergence bookkeeping attached to every clustering result. The
/// objective is method specific: inertia, log-likelihood, or net similarity
/// (cluster count for DBSCAN, which optimizes no explicit objective).
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Per-iteration objective values, used to assert monotonicity.
    pub objective_trace: Vec<f64>,
}

/// Canonical predicted labels plus diagnostics.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub labels: SessionLabeling,
    pub diagnostics: Diagnostics,
}

/// Which clustering backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    Kmeans,
    Gmm,
    Dbscan { eps: f64, min_pts: usize },
    Ap,
}

/// Where the session count for k-requiring methods comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSource {
    Gold,
    Head,
    Given(usize),
}

/// Run one clustering backend over a point matrix.
pub fn cluster(
    points: &Array2<f64>,
    method: &Method,
    k: Option<usize>,
    seed: u64,
) -> Result<ClusteringResult> {
    match method {
        Method::Kmeans => {
            let k = k.ok_or_else(|| Error::Config("kmeans requires a session count".into()))?;
            kmeans(points, k, seed)
        }
        Method::Gmm => {
            let k = k.ok_or_else(|| Error::Config("gmm requires a session count".into()))?;
            gmm(points, k, seed)
        }
        Method::Dbscan { eps, min_pts } => dbscan(points, *eps, *min_pts),
        Method::Ap => affinity_propagation(points),
    }
}

/// Encode a dialogue, fuse it, resolve the session count, and cluster the
/// representations into a canonical session labeling.
pub fn disentangle(
    dialogue: &Dialogue,
    model: &Model,
    precomputed: Option<&PrecomputedEmbeddings>,
    method: &Method,
    k_source: KSource,
    seed: u64,
) -> Result<SessionLabeling> {
    let (_, embeddings) = model.embeddings_for(dialogue, precomputed)?;
    let r = model.representations(&embeddings);
    let k = match method {
        Method::Kmeans | Method::Gmm => Some(resolve_k(dialogue, model, &embeddings, k_source)?),
        // Density and exemplar methods find their own cluster count.
        Method::Dbscan { .. } | Method::Ap => None,
    };
    Ok(cluster(&r, method, k, seed)?.labels)
}

fn resolve_k(
    dialogue: &Dialogue,
    model: &Model,
    embeddings: &Array2<f64>,
    k_source: KSource,
) -> Result<usize> {
    let k = match k_source {
        KSource::Gold => dialogue
            .gold_labeling()
            .ok_or_else(|| {
                Error::Config(format!(
                    "k_source = gold but dialogue {:?} has no session labels",
                    dialogue.dialogue_id
                ))
            })?
            .k(),
        KSource::Head => model.predict_k_for(embeddings),
        KSource::Given(k) => {
            if k == 0 {
                return Err(Error::Config("given session count must be positive".into()));
            }
            k
        }
    };
    // A predicted or given count can exceed the dialogue length on very
    // short inputs; clamp so the clustering precondition k <= n holds.
    Ok(k.min(dialogue.n()))
}
