//! Forward filtering / backward smoothing over a topological order.
//!
//! Every latent quantity is tracked as a mean plus a linear combination of
//! the primitive noises: `x = u + G ξ + H ε`, with `ξ` the `M` latent SEM
//! noises (variance `ω²`) and `ε` the stacked observation noises (variance
//! `r²_jl`). Covariances follow as `ω² G Gᵀ + H diag(r) Hᵀ`.
//!
//! The forward pass keeps the predictive state of every node not yet
//! processed, starting from the prior and absorbing one node's observations
//! per step. The filtered row of the processed node and the predictive rows
//! of the nodes after it are recorded. The backward pass then conditions
//! each node on all later nodes jointly, in reverse order.

use nalgebra::Cholesky;

use super::{check_invertible, direct::check_compatible, floored_omega2, floored_r2};
use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{symmetrize, Mat};
use crate::model::{FunctionalDataset, ModelParams, PosteriorSummary, ProblemShape};

/// Noise-coefficient representation of a set of latent rows.
#[derive(Clone)]
struct NoiseRows {
    /// N × rows means.
    u: Mat,
    /// rows × M coefficients of ξ.
    g: Mat,
    /// rows × D coefficients of ε.
    h: Mat,
}

impl NoiseRows {
    fn cross_cov(&self, other: &NoiseRows, omega2: f64, r_diag: &[f64]) -> Mat {
        let mut h_scaled = other.h.clone();
        for (c, &r) in r_diag.iter().enumerate() {
            h_scaled.column_mut(c).scale_mut(r);
        }
        &self.g * other.g.transpose() * omega2 + &self.h * h_scaled.transpose()
    }

    fn select(&self, rows: &[usize]) -> NoiseRows {
        NoiseRows {
            u: self.u.select_columns(rows),
            g: self.g.select_rows(rows),
            h: self.h.select_rows(rows),
        }
    }
}

/// Latent row indices of `nodes`, in the given node order.
fn rows_of(shape: &ProblemShape, nodes: &[usize]) -> Vec<usize> {
    nodes
        .iter()
        .flat_map(|&j| {
            let off = shape.block_offset(j);
            off..off + shape.block_len(j)
        })
        .collect()
}

/// Topological order of the nonzero-block support of `params`, if acyclic.
pub fn topological_order(params: &ModelParams) -> Result<Vec<usize>> {
    let support = block_support(params)?;
    graph::topological_order(&support).ok_or_else(|| Error::Input("transition support is cyclic".into()))
}

fn block_support(params: &ModelParams) -> Result<Vec<Vec<bool>>> {
    let s = &params.shape;
    let c = params.transition()?;
    Ok((0..s.p)
        .map(|i| {
            (0..s.p)
                .map(|j| {
                    i != j
                        && c.view((s.block_offset(i), s.block_offset(j)), (s.block_len(i), s.block_len(j)))
                            .iter()
                            .any(|v| *v != 0.0)
                })
                .collect()
        })
        .collect())
}

struct StepRecord {
    /// Filtered row of the node processed at this step.
    filtered: NoiseRows,
    /// Predictive rows of all nodes after it, given observations so far.
    later: NoiseRows,
}

/// Exact posterior by message passing along `order`.
pub fn ffbs_posterior(data: &FunctionalDataset, params: &ModelParams, order: &[usize]) -> Result<PosteriorSummary> {
    check_compatible(&data.shape, params)?;
    let s = &params.shape;
    let p = s.p;
    let mut seen = vec![false; p];
    if order.len() != p || order.iter().any(|&j| j >= p || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::Input("order must be a permutation of the nodes".into()));
    }
    let support = block_support(params)?;
    let mut pos = vec![0; p];
    for (k, &j) in order.iter().enumerate() {
        pos[j] = k;
    }
    for i in 0..p {
        for j in 0..p {
            if support[i][j] && pos[i] >= pos[j] {
                return Err(Error::InvalidOrder { from: i, to: j });
            }
        }
    }

    let m = s.m();
    let d = s.obs_len();
    let n = data.shape.n;
    let omega2 = floored_omega2(params);
    let r2 = floored_r2(params);
    let mut r_diag = vec![0.0; d];
    for (j, l) in s.series() {
        let off = s.obs_offset(j, l);
        r_diag[off..off + s.t].iter_mut().for_each(|v| *v = r2[s.series_index(j, l)]);
    }
    let c = params.transition()?;
    check_invertible(&(Mat::identity(m, m) - &c))?;

    // Prior: x_j = Σ_{k ∈ pa(j)} x_k C_kj + ξ_j, propagated along the order.
    let mut state = NoiseRows {
        u: Mat::zeros(n, m),
        g: Mat::zeros(m, m),
        h: Mat::zeros(m, d),
    };
    for &j in order {
        let (oj, bj) = (s.block_offset(j), s.block_len(j));
        let mut g_j = Mat::zeros(bj, m);
        for k in (0..p).filter(|&k| support[k][j]) {
            let (ok, bk) = (s.block_offset(k), s.block_len(k));
            let c_kj = c.view((ok, oj), (bk, bj));
            g_j += c_kj.transpose() * state.g.rows(ok, bk);
        }
        for i in 0..bj {
            g_j[(i, oj + i)] += 1.0;
        }
        state.g.rows_mut(oj, bj).copy_from(&g_j);
    }

    // Forward filtering.
    let mut records = Vec::with_capacity(p);
    for (step, &j) in order.iter().enumerate() {
        let active_rows = rows_of(s, &order[step..]);
        let active = state.select(&active_rows);
        let own = state.select(&rows_of(s, &[j]));

        // Innovation e = Y_j - B_j u_j = Σ_l B_j (x_jl - u_jl) + ε_jl.
        let lj = s.l[j];
        let kj = s.k[j];
        let bj = &params.b[j];
        let mut innov = Mat::zeros(n, lj * s.t);
        let mut g_e = Mat::zeros(lj * s.t, m);
        let mut h_e = Mat::zeros(lj * s.t, d);
        for l in 0..lj {
            let rows = l * s.t..(l + 1) * s.t;
            let y = data.values.columns(s.obs_offset(j, l), s.t);
            let pred = own.u.columns(l * kj, kj) * bj.transpose();
            innov.columns_mut(rows.start, s.t).copy_from(&(y - pred));
            g_e.rows_mut(rows.start, s.t).copy_from(&(bj * own.g.rows(l * kj, kj)));
            let mut h_l = bj * own.h.rows(l * kj, kj);
            let obs = s.obs_offset(j, l);
            for t in 0..s.t {
                h_l[(t, obs + t)] += 1.0;
            }
            h_e.rows_mut(rows.start, s.t).copy_from(&h_l);
        }
        let innovation = NoiseRows {
            u: innov,
            g: g_e,
            h: h_e,
        };
        let s_cov = symmetrize(&innovation.cross_cov(&innovation, omega2, &r_diag));
        let chol = Cholesky::new(s_cov).ok_or(Error::NotPositiveDefinite)?;
        let cross = active.cross_cov(&innovation, omega2, &r_diag);
        // Gain K = cross S⁻¹, computed as (S⁻¹ crossᵀ)ᵀ.
        let gain = chol.solve(&cross.transpose()).transpose();
        let updated = NoiseRows {
            u: &active.u + &innovation.u * gain.transpose(),
            g: &active.g - &gain * &innovation.g,
            h: &active.h - &gain * &innovation.h,
        };
        for (local, &row) in active_rows.iter().enumerate() {
            state.u.set_column(row, &updated.u.column(local));
            state.g.set_row(row, &updated.g.row(local));
            state.h.set_row(row, &updated.h.row(local));
        }
        records.push(StepRecord {
            filtered: state.select(&rows_of(s, &[j])),
            later: state.select(&rows_of(s, &order[step + 1..])),
        });
    }

    // Backward smoothing: condition node k on all nodes after it jointly.
    let mut smoothed = NoiseRows {
        u: Mat::zeros(n, m),
        g: Mat::zeros(m, m),
        h: Mat::zeros(m, d),
    };
    for (step, &k) in order.iter().enumerate().rev() {
        let rec = &records[step];
        let own_rows = rows_of(s, &[k]);
        let result = if step + 1 == p {
            rec.filtered.clone()
        } else {
            let later_rows = rows_of(s, &order[step + 1..]);
            let later_smoothed = smoothed.select(&later_rows);
            let sigma_later = symmetrize(&rec.later.cross_cov(&rec.later, omega2, &r_diag));
            let chol = Cholesky::new(sigma_later).ok_or(Error::NotPositiveDefinite)?;
            let cross = rec.filtered.cross_cov(&rec.later, omega2, &r_diag);
            let j_gain = chol.solve(&cross.transpose()).transpose();
            NoiseRows {
                u: &rec.filtered.u + (&later_smoothed.u - &rec.later.u) * j_gain.transpose(),
                g: &rec.filtered.g - &j_gain * (&rec.later.g - &later_smoothed.g),
                h: &rec.filtered.h - &j_gain * (&rec.later.h - &later_smoothed.h),
            }
        };
        for (local, &row) in own_rows.iter().enumerate() {
            smoothed.u.set_column(row, &result.u.column(local));
            smoothed.g.set_row(row, &result.g.row(local));
            smoothed.h.set_row(row, &result.h.row(local));
        }
    }

    let sigma_hat = symmetrize(&smoothed.cross_cov(&smoothed, omega2, &r_diag));
    Ok(PosteriorSummary {
        u_hat: smoothed.u,
        sigma_hat,
    })
}
