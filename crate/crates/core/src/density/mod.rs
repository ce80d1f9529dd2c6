//! Cost-weighted density estimation over sampled trajectories.

mod eigenmap;
mod modes;
mod vbem;
mod weights;

use thiserror::Error;

pub use eigenmap::{affinity_matrix, laplacian_eigenmap, EigenmapParams, EmbeddedBatch};
pub use modes::{mode_trajectories, Mode, ModeSet};
pub use vbem::{assign_clusters, responsibilities, vbem_fit, weighted_elbo, VbemInit, VbemParams, VbemPriors, WeightedGmmPosterior};
pub use weights::{importance_weights, weights_from_target, ImportanceWeights};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    Empty,
    #[error("non-finite input")]
    NonFinite,
    #[error("{points} points cannot be embedded in {dim} dimensions")]
    TooFewPoints { points: usize, dim: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("every cluster is empty")]
    NoClusters,
}
