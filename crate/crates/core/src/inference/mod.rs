//! E-step: the Gaussian posterior of the latent coefficients given the
//! observations, by direct joint-Gaussian conditioning or by forward
//! filtering / backward smoothing over a topological order.

mod direct;
mod ffbs;
mod loglik;

pub use direct::{posterior_direct, prior_covariance, ObservationOperator};
pub use ffbs::{ffbs_posterior, topological_order};
pub use loglik::expected_complete_loglik;
pub(crate) use loglik::expected_residual_energy;

/// Floor applied to observation variances before inversion.
pub const R2_FLOOR: f64 = 1e-8;
/// Floor applied to the latent variance before inversion.
pub const OMEGA2_FLOOR: f64 = 1e-10;

use crate::linalg::Mat;
use crate::model::ModelParams;

pub(crate) fn floored_r2(params: &ModelParams) -> Vec<f64> {
    params.r2.iter().map(|v| v.max(R2_FLOOR)).collect()
}

pub(crate) fn floored_omega2(params: &ModelParams) -> f64 {
    params.omega2.max(OMEGA2_FLOOR)
}

/// Fail on a singular or numerically degenerate `I - C`.
pub(crate) fn check_invertible(i_minus_c: &Mat) -> crate::Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = i_minus_c.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min.is_finite() && max.is_finite()) || min <= 1e-13 * max.max(1.0) {
        return Err(crate::Error::SingularTransition);
    }
    Ok(lu)
}
