//! Forgetting metrics over accuracy matrices, feature-space projections
//! (PCA and t-SNE) and report emission.

mod pca;
pub mod report;
mod tsne;

pub use pca::{pca, pca_components};
pub use report::emit_reports;
pub use tsne::tsne;

use std::io;

use thiserror::Error;

use crate::dataset::{Activity, NUM_CLASSES};
use crate::fedsim::ModelId;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least two rounds to measure forgetting")]
    TooFewRounds,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("perplexity infeasible: {0}")]
    PerplexityInfeasible(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] io::Error),
}

/// Per-round, per-class accuracy of one evaluated model.
#[derive(Debug, Clone)]
pub struct AccuracyMatrix {
    pub model: ModelId,
    /// Row r holds the per-class accuracies after round r+1.
    pub rows: Vec<[f64; NUM_CLASSES]>,
}

/// Per-class forgetting: the best accuracy seen before the final round minus
/// the final accuracy. Positive means the class was forgotten.
pub fn forgetting(m: &AccuracyMatrix) -> Result<[f64; NUM_CLASSES], AnalysisError> {
    if m.rows.len() < 2 {
        return Err(AnalysisError::TooFewRounds);
    }
    let last = m.rows[m.rows.len() - 1];
    let mut f = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let best_before = m.rows[..m.rows.len() - 1]
            .iter()
            .map(|r| r[c])
            .fold(f64::NEG_INFINITY, f64::max);
        f[c] = best_before - last[c];
    }
    Ok(f)
}

/// Low-dimensional embedding of feature rows, with method metadata.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `[n, d]` with `d` 2 or 3.
    pub coords: Tensor,
    /// One class per row; may be empty until attached by the caller.
    pub labels: Vec<Activity>,
    pub meta: ProjectionMeta,
}

#[derive(Debug, Clone)]
pub enum ProjectionMeta {
    Pca {
        /// Top-k explained-variance ratios, non-increasing.
        explained_variance: Vec<f64>,
    },
    Tsne {
        final_kl: f64,
        /// KL divergence checkpoints as (iteration, value).
        kl_trace: Vec<(usize, f64)>,
        /// Per-point Gaussian precisions found by the bandwidth search.
        betas: Vec<f64>,
    },
}

impl Projection {
    pub fn method_name(&self) -> &'static str {
        match self.meta {
            ProjectionMeta::Pca { .. } => "pca",
            ProjectionMeta::Tsne { .. } => "tsne",
        }
    }

    pub fn with_labels(mut self, labels: Vec<Activity>) -> Projection {
        assert_eq!(
            labels.len(),
            self.coords.shape()[0],
            "one label per projected row"
        );
        self.labels = labels;
        self
    }
}
