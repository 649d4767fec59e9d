use nalgebra::Cholesky;

use super::{check_invertible, floored_omega2, floored_r2};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Mat};
use crate::model::{FunctionalDataset, ModelParams, PosteriorSummary, ProblemShape};

/// The linear map from latent coefficients to stacked observations, with
/// its diagonal noise variances.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    /// `(T Σ L_j) × M`, block-diagonal by series: block `(j, l)` is `B_j`.
    pub h: Mat,
    /// Noise variance per stacked observation entry.
    pub r_diag: Vec<f64>,
}

impl ObservationOperator {
    pub fn new(params: &ModelParams) -> Self {
        let s = &params.shape;
        let r2 = floored_r2(params);
        let mut h = Mat::zeros(s.obs_len(), s.m());
        let mut r_diag = vec![0.0; s.obs_len()];
        for (j, l) in s.series() {
            let (row, col) = (s.obs_offset(j, l), s.latent_offset(j, l));
            h.view_mut((row, col), (s.t, s.k[j])).copy_from(&params.b[j]);
            let r = r2[s.series_index(j, l)];
            r_diag[row..row + s.t].iter_mut().for_each(|v| *v = r);
        }
        Self { h, r_diag }
    }
}

/// Prior covariance of the stacked latent vector under the row-convention
/// SEM `x = xC + ξ`: `Σ_x = (I - C)^{-T} ω² (I - C)^{-1}`.
pub fn prior_covariance(c: &Mat, omega2: f64) -> Result<Mat> {
    let m = c.nrows();
    if c.ncols() != m {
        return Err(Error::Dimension("transition matrix must be square".into()));
    }
    let a = Mat::identity(m, m) - c;
    let lu = check_invertible(&a)?;
    let inv = lu.try_inverse().ok_or(Error::SingularTransition)?;
    Ok(symmetrize(&(inv.transpose() * &inv * omega2)))
}

/// `Hᵀ R⁻¹ H`, block-diagonal by series with blocks `B_jᵀ B_j / r²_jl`.
fn observation_precision(params: &ModelParams, r2: &[f64]) -> Mat {
    let s = &params.shape;
    let mut out = Mat::zeros(s.m(), s.m());
    for (j, l) in s.series() {
        let off = s.latent_offset(j, l);
        let block = params.b[j].transpose() * &params.b[j] / r2[s.series_index(j, l)];
        out.view_mut((off, off), block.shape()).copy_from(&block);
    }
    out
}

/// `Y R⁻¹ H`: row `n` is `(Hᵀ R⁻¹ y_n)ᵀ`.
pub(crate) fn weighted_projection(data: &FunctionalDataset, params: &ModelParams, r2: &[f64]) -> Mat {
    let s = &params.shape;
    let mut out = Mat::zeros(data.shape.n, s.m());
    for (j, l) in s.series() {
        let y = data.values.columns(s.obs_offset(j, l), s.t);
        let proj = y * &params.b[j] / r2[s.series_index(j, l)];
        out.columns_mut(s.latent_offset(j, l), s.k[j]).copy_from(&proj);
    }
    out
}

pub(crate) fn check_compatible(shape: &ProblemShape, params: &ModelParams) -> Result<()> {
    if !shape.same_layout(&params.shape) {
        return Err(Error::Dimension("dataset and parameters have different shapes".into()));
    }
    Ok(())
}

/// Exact posterior by joint-Gaussian conditioning:
/// `Σ̂ = (Σ_x⁻¹ + Hᵀ R⁻¹ H)⁻¹` and `û_n = Σ̂ Hᵀ R⁻¹ y_n`.
pub fn posterior_direct(data: &FunctionalDataset, params: &ModelParams) -> Result<PosteriorSummary> {
    check_compatible(&data.shape, params)?;
    let m = params.shape.m();
    let r2 = floored_r2(params);
    let omega2 = floored_omega2(params);
    let c = params.transition()?;
    let a = Mat::identity(m, m) - &c;
    check_invertible(&a)?;

    // Σ_x⁻¹ = (I - C) ω⁻² (I - C)ᵀ needs no explicit inverse.
    let prior_precision = &a * a.transpose() / omega2;
    let precision = symmetrize(&(prior_precision + observation_precision(params, &r2)));
    let chol = Cholesky::new(precision).ok_or(Error::NotPositiveDefinite)?;
    let sigma_hat = symmetrize(&chol.inverse());

    let proj = weighted_projection(data, params, &r2);
    // Σ̂ is symmetric, so rows of Û are (Σ̂ Hᵀ R⁻¹ y_n)ᵀ = (Y R⁻¹ H Σ̂)_n.
    let u_hat = chol.solve(&proj.transpose()).transpose();
    Ok(PosteriorSummary { u_hat, sigma_hat })
}
