//! End-to-end dialogue disentanglement: sequential fusion representations
//! trained with a pairwise margin contrastive loss, per-dialogue session
//! count prediction, clustering into sessions, and the five standard
//! disentanglement metrics.

pub mod assignment;
pub mod cluster_head;
pub mod clustering;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod sff;

pub use error::{Error, Result};
