//! Domain types: problem shape and latent layout, datasets, model
//! parameters, block adjacency, and posterior summaries.

mod adjacency;
mod dataset;
mod params;
mod shape;

pub use adjacency::{compute_w, BlockAdjacency, EdgeMask};
pub use dataset::{uniform_grid, FunctionalDataset};
pub use params::{assemble_c, param_distance, unit_ck, ModelParams};
pub use shape::ProblemShape;

use crate::linalg::Mat;

/// Gaussian posterior of the latent coefficients: one mean row per sample
/// and a covariance shared by all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// N × M, row n is the posterior mean for sample n.
    pub u_hat: Mat,
    /// M × M shared posterior covariance.
    pub sigma_hat: Mat,
}

impl PosteriorSummary {
    /// `(1/N) ÛᵀÛ + Σ̂`, the posterior second moment averaged over samples.
    pub fn second_moment(&self) -> Mat {
        let n = self.u_hat.nrows().max(1) as f64;
        self.u_hat.transpose() * &self.u_hat / n + &self.sigma_hat
    }
}
