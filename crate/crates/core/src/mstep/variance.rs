use super::objective_g;
use crate::error::Result;
use crate::linalg::{frob_sq, Mat};
use crate::model::{FunctionalDataset, PosteriorSummary};

/// Closed-form noise variances, one per `(j, l)`:
/// `r²_jl = (1/(N T)) Σ_n [ ‖Y_jl - B_j û_jl‖² + tr(B_j Σ̂_jl B_jᵀ) ]`.
pub fn update_r(data: &FunctionalDataset, post: &PosteriorSummary, b: &[Mat]) -> Vec<f64> {
    let s = &data.shape;
    let nf = s.n as f64;
    s.series()
        .map(|(j, l)| {
            let off = s.latent_offset(j, l);
            let y = data.values.columns(s.obs_offset(j, l), s.t);
            let fitted = post.u_hat.columns(off, s.k[j]) * b[j].transpose();
            let sig = post.sigma_hat.view((off, off), (s.k[j], s.k[j]));
            let trace = (&b[j] * sig * b[j].transpose()).trace();
            ((frob_sq(&(y - fitted)) / nf + trace) / s.t as f64).max(0.0)
        })
        .collect()
}

/// Closed-form latent variance given the transition matrix:
/// `ω² = (1/(N M)) Σ_n [ ‖û - ûC‖² + tr((I - C)ᵀ Σ̂ (I - C)) ]`.
pub fn update_omega(post: &PosteriorSummary, c: &Mat) -> Result<f64> {
    Ok(objective_g(c, post)? / c.nrows() as f64)
}
