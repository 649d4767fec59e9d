//! Two-stage comparison methods built on the same constrained solver:
//! functional PCA scores followed by a sparse acyclic regression.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::{FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::linalg::{nearest_kronecker, principal_basis, Mat};
use crate::model::{
    param_distance, BlockAdjacency, EdgeMask, FunctionalDataset, ModelParams, PosteriorSummary, ProblemShape,
};
use crate::mstep::{notears_h, solve_c, update_omega, SolveOutput, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpcaMode {
    /// One basis per node from that node's series.
    PerNode,
    /// One basis for all nodes from the pooled series.
    Shared,
}

/// Uncentered functional PCA of every node.
#[derive(Debug, Clone)]
pub struct FpcaScores {
    /// `N × M` scores in the latent layout (node, function, coefficient).
    pub scores: Mat,
    pub bases: Vec<Mat>,
    /// Per-series mean squared projection residual.
    pub residual: Vec<f64>,
    /// Set when some basis had to be padded with random directions.
    pub padded: bool,
}

pub fn fpca_scores(data: &FunctionalDataset, k: &[usize], mode: FpcaMode, seed: u64) -> Result<FpcaScores> {
    let s = data.shape.with_k(k);
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut padded = false;
    let bases: Vec<Mat> = match mode {
        FpcaMode::PerNode => (0..s.p)
            .map(|j| {
                let (b, pad) = principal_basis(&data.node_matrix(j), k[j], &mut rng);
                padded |= pad;
                b
            })
            .collect(),
        FpcaMode::Shared => {
            if k.iter().any(|&v| v != k[0]) {
                return Err(Error::config("K", "a shared basis needs the same K for every node"));
            }
            let cols: Vec<Mat> = (0..s.p).map(|j| data.node_matrix(j)).collect();
            let width = cols.iter().map(|c| c.ncols()).sum();
            let mut pooled = Mat::zeros(s.t, width);
            let mut at = 0;
            for c in &cols {
                pooled.columns_mut(at, c.ncols()).copy_from(c);
                at += c.ncols();
            }
            let (b, pad) = principal_basis(&pooled, k[0], &mut rng);
            padded = pad;
            vec![b; s.p]
        }
    };
    let mut scores = Mat::zeros(s.n, s.m());
    let mut residual = vec![0.0; s.n_series()];
    for (j, l) in s.series() {
        let y = data.values.columns(s.obs_offset(j, l), s.t);
        let x = y * &bases[j];
        residual[s.series_index(j, l)] = (y - &x * bases[j].transpose()).norm_squared() / (s.n * s.t) as f64;
        scores.columns_mut(s.latent_offset(j, l), k[j]).copy_from(&x);
    }
    Ok(FpcaScores {
        scores,
        bases,
        residual,
        padded,
    })
}

fn score_posterior(scores: &Mat) -> PosteriorSummary {
    let m = scores.ncols();
    PosteriorSummary {
        u_hat: scores.clone(),
        sigma_hat: Mat::zeros(m, m),
    }
}

/// Sparse acyclic regression of the scores on themselves with the
/// Kronecker-factored blocks of `shape`; no EM iteration.
pub fn mfgm_from_scores(scores: &Mat, shape: &ProblemShape, mask: &EdgeMask, solver: &SolverConfig) -> Result<SolveOutput> {
    if scores.ncols() != shape.m() {
        return Err(Error::Dimension("score matrix does not match the latent layout".into()));
    }
    let init = ModelParams::empty(shape.with_n(scores.nrows()), mask.clone())?;
    solve_c(&score_posterior(scores), mask, solver, &init)
}

/// Scalar NOTEARS over individual scores: every score is its own node with
/// `1 × 1` blocks. Edges between scores of the same functional node, or
/// between nodes the mask forbids, are excluded. Returns the score-level
/// solve and the score-level mask.
pub fn notears_from_scores(
    scores: &Mat,
    shape: &ProblemShape,
    mask: &EdgeMask,
    solver: &SolverConfig,
) -> Result<(SolveOutput, ProblemShape)> {
    let m = shape.m();
    if scores.ncols() != m {
        return Err(Error::Dimension("score matrix does not match the latent layout".into()));
    }
    let owner: Vec<usize> = (0..shape.p).flat_map(|j| std::iter::repeat_n(j, shape.block_len(j))).collect();
    let score_mask = EdgeMask::from_fn(m, |a, b| mask.allows(owner[a], owner[b]));
    let score_shape = ProblemShape::uniform(m, 1, 1, shape.t.max(2), scores.nrows())?;
    let init = ModelParams::empty(score_shape.clone(), score_mask.clone())?;
    let out = solve_c(&score_posterior(scores), &score_mask, solver, &init)?;
    Ok((out, score_shape))
}

fn report(
    params: ModelParams,
    w: BlockAdjacency,
    start: &ModelParams,
    inner_warning: bool,
    feasible: bool,
) -> Result<FitReport> {
    let d = param_distance(&params, start)?;
    Ok(FitReport {
        h_final: notears_h(&w.w).0,
        params,
        w,
        iterations: 1,
        d_history: vec![d],
        q_history: Vec::new(),
        q_before: Vec::new(),
        converged: feasible,
        degenerate_basis_nodes: Vec::new(),
        inner_warning,
        duals: None,
    })
}

fn start_params(shape: &ProblemShape, mask: &EdgeMask, f: &FpcaScores) -> Result<ModelParams> {
    let mut p = ModelParams::empty(shape.clone(), mask.clone())?;
    p.b = f.bases.clone();
    p.r2 = f.residual.clone();
    Ok(p)
}

/// Per-node FPCA, then one constrained solve on the scores.
pub fn fit_mfgm(data: &FunctionalDataset, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let shape = cfg.shape_for(data)?;
    let mask = cfg.mask_for(shape.p)?;
    let f = fpca_scores(data, &shape.k, FpcaMode::PerNode, cfg.seed)?;
    let out = mfgm_from_scores(&f.scores, &shape, &mask, &cfg.solver)?;
    let start = start_params(&shape, &mask, &f)?;
    let mut params = start.clone();
    out.write_into(&mut params);
    params.omega2 = update_omega(&score_posterior(&f.scores), &params.transition()?)?.max(crate::inference::OMEGA2_FLOOR);
    report(params, out.w.clone(), &start, out.inner_warning, out.feasible)
}

/// Shared-basis FPCA, scalar NOTEARS on the scores, then node-level merge
/// `W_jk = ‖C_{scores of j, scores of k}‖_F`. The returned parameters hold
/// the nearest Kronecker factorization of each merged block.
pub fn fit_scalar_notears(data: &FunctionalDataset, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let shape = cfg.shape_for(data)?;
    let mask = cfg.mask_for(shape.p)?;
    let f = fpca_scores(data, &shape.k, FpcaMode::Shared, cfg.seed)?;
    let (out, score_shape) = notears_from_scores(&f.scores, &shape, &mask, &cfg.solver)?;

    let score_params = {
        let mut sp = ModelParams::empty(score_shape, out.w.mask.clone())?;
        out.write_into(&mut sp);
        sp
    };
    let c = score_params.transition()?;
    let start = start_params(&shape, &mask, &f)?;
    let mut params = start.clone();
    let mut w = Mat::zeros(shape.p, shape.p);
    for (i, j) in mask.allowed_pairs() {
        let block = c
            .view((shape.block_offset(i), shape.block_offset(j)), (shape.block_len(i), shape.block_len(j)))
            .clone_owned();
        w[(i, j)] = block.norm();
        let (cl, ck) = nearest_kronecker(&block, (shape.l[i], shape.l[j]), (shape.k[i], shape.k[j]));
        *params.cl_mut(i, j) = cl;
        *params.ck_mut(i, j) = if ck.norm() > 0.0 {
            ck
        } else {
            crate::model::unit_ck(shape.k[i], shape.k[j])
        };
    }
    params.omega2 = update_omega(&score_posterior(&f.scores), &c)?.max(crate::inference::OMEGA2_FLOOR);
    report(params, BlockAdjacency { w, mask }, &start, out.inner_warning, out.feasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn data(p: usize, l: usize, k: usize, r2: f64, seed: u64) -> FunctionalDataset {
        let cfg = SynthConfig {
            shape: ProblemShape::uniform(p, l, k, 12, 60).unwrap(),
            r2_true: r2,
            edge_prob: 0.6,
            seed,
            ..SynthConfig::default()
        };
        generate_dataset(&cfg).unwrap().0
    }

    #[test]
    fn exact_rank_reconstructs() {
        let d = data(3, 2, 3, 0.0, 1);
        for mode in [FpcaMode::PerNode, FpcaMode::Shared] {
            let f = fpca_scores(&d, &[3, 3, 3], mode, 0).unwrap();
            assert!(f.residual.iter().all(|&r| r < 1e-20), "{mode:?}");
            assert!(!f.padded);
        }
    }

    #[test]
    fn score_second_moments_are_ordered() {
        let d = data(2, 1, 3, 0.01, 2);
        let f = fpca_scores(&d, &[3, 3], FpcaMode::PerNode, 0).unwrap();
        for j in 0..2 {
            let v: Vec<f64> = (0..3).map(|c| f.scores.column(j * 3 + c).norm_squared()).collect();
            assert!(v[0] >= v[1] && v[1] >= v[2], "{v:?}");
        }
    }

    #[test]
    fn huge_lambda_and_empty_mask() {
        let d = data(3, 1, 2, 0.01, 3);
        let mut cfg = FitConfig::default();
        cfg.solver.lambda = 1e6;
        let rep = fit_mfgm(&d, &cfg).unwrap();
        assert!(rep.w.w.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 1);

        let f = fpca_scores(&d, &[2, 2, 2], FpcaMode::PerNode, 0).unwrap();
        let out = mfgm_from_scores(&f.scores, &d.shape, &EdgeMask::empty(3), &SolverConfig::default()).unwrap();
        let expect = f.scores.norm_squared() / d.shape.n as f64;
        assert!((out.objective - expect).abs() < 1e-10 * expect);
        assert!(out.w.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_nodes_match_mfgm() {
        let d = data(3, 1, 1, 0.01, 4);
        let f = fpca_scores(&d, &[1, 1, 1], FpcaMode::PerNode, 0).unwrap();
        let mask = EdgeMask::full(3);
        let cfg = SolverConfig::default();
        let a = mfgm_from_scores(&f.scores, &d.shape, &mask, &cfg).unwrap();
        let (b, _) = notears_from_scores(&f.scores, &d.shape, &mask, &cfg).unwrap();
        assert_eq!(a.w.support(0.3), b.w.support(0.3));
    }

    #[test]
    fn merged_w_is_block_norm() {
        let d = data(3, 2, 2, 0.01, 5);
        let rep = fit_scalar_notears(&d, &FitConfig::default()).unwrap();
        for i in 0..3 {
            assert_eq!(rep.w.w[(i, i)], 0.0);
        }
        for (i, j) in rep.params.mask.allowed_pairs() {
            let approx = rep.params.cl(i, j).norm() * rep.params.ck(i, j).norm();
            assert!(approx <= rep.w.w[(i, j)] + 1e-12);
            assert_eq!(rep.w.w[(i, j)] == 0.0, approx == 0.0);
        }
    }
}
