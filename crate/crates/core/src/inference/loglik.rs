use super::{direct::check_compatible, floored_omega2, floored_r2};
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, Mat};
use crate::model::{FunctionalDataset, ModelParams, PosteriorSummary};

/// Expected complete-data log-likelihood `Q(Θ; Θ')`, summed over samples
/// and without additive constants, where the expectation is under the
/// posterior `post` computed at `Θ'`:
///
/// `-½ Σ_n [ Σ_jl E‖Y_jl - B_j x_jl‖² / r²_jl + E‖x - xC‖² / ω²
///          + Σ_jl T log r²_jl + M log ω² ]`.
pub fn expected_complete_loglik(data: &FunctionalDataset, params: &ModelParams, post: &PosteriorSummary) -> Result<f64> {
    check_compatible(&data.shape, params)?;
    let s = &params.shape;
    let m = s.m();
    let n = data.shape.n;
    if post.u_hat.shape() != (n, m) || post.sigma_hat.shape() != (m, m) {
        return Err(Error::Dimension("posterior does not match the dataset".into()));
    }
    let r2 = floored_r2(params);
    let omega2 = floored_omega2(params);
    let nf = n as f64;

    let mut obs_term = 0.0;
    let mut log_r = 0.0;
    for (j, l) in s.series() {
        let idx = s.series_index(j, l);
        let off = s.latent_offset(j, l);
        let b = &params.b[j];
        let y = data.values.columns(s.obs_offset(j, l), s.t);
        let fitted = post.u_hat.columns(off, s.k[j]) * b.transpose();
        let resid = frob_sq(&(y - fitted));
        let sig = post.sigma_hat.view((off, off), (s.k[j], s.k[j]));
        let trace = (b * sig * b.transpose()).trace();
        obs_term += (resid + nf * trace) / r2[idx];
        log_r += s.t as f64 * r2[idx].ln();
    }

    let c = params.transition()?;
    let g = crate::mstep::objective_g(&c, post)?;
    let latent_term = nf * g / omega2;

    Ok(-0.5 * (obs_term + latent_term + nf * (log_r + m as f64 * omega2.ln())))
}

/// `Σ_n E‖Y^(n) - B x^(n)‖²` over all series, used by the MSE diagnostics.
pub(crate) fn expected_residual_energy(data: &FunctionalDataset, b: &[Mat], post: &PosteriorSummary) -> f64 {
    let s = &data.shape;
    let nf = s.n as f64;
    s.series()
        .map(|(j, l)| {
            let off = s.latent_offset(j, l);
            let y = data.values.columns(s.obs_offset(j, l), s.t);
            let fitted = post.u_hat.columns(off, s.k[j]) * b[j].transpose();
            let sig = post.sigma_hat.view((off, off), (s.k[j], s.k[j]));
            frob_sq(&(y - fitted)) + nf * (&b[j] * sig * b[j].transpose()).trace()
        })
        .sum()
}
