//! Synthetic benchmark data: Erdős–Rényi DAGs, shared Fourier bases and
//! Kronecker-structured transition blocks `c · 1_{L×L} ⊗ I_K`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, Mat};
use crate::model::{uniform_grid, EdgeMask, FunctionalDataset, ModelParams, ProblemShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: ProblemShape,
    pub edge_prob: f64,
    /// Coefficient magnitudes are uniform on `[coef_low, coef_high]`; the sign
    /// is a fair coin.
    pub coef_low: f64,
    pub coef_high: f64,
    pub omega2_true: f64,
    pub r2_true: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: ProblemShape::uniform(5, 2, 3, 50, 100).expect("valid default shape"),
            edge_prob: 0.4,
            coef_low: 0.5,
            coef_high: 2.0,
            omega2_true: 1.0,
            r2_true: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::config("edge_prob", "must lie in [0, 1]"));
        }
        if !(self.coef_low > 0.0 && self.coef_low < self.coef_high && self.coef_high.is_finite()) {
            return Err(Error::config("coef_low", "need 0 < coef_low < coef_high"));
        }
        if !(self.omega2_true.is_finite() && self.omega2_true >= 0.0) {
            return Err(Error::config("omega2_true", "must be nonnegative"));
        }
        if !(self.r2_true.is_finite() && self.r2_true >= 0.0) {
            return Err(Error::config("r2_true", "must be nonnegative"));
        }
        let k0 = self.shape.k[0];
        if self.shape.k.iter().any(|&k| k != k0) {
            return Err(Error::config("K", "the generator needs the same K for every node"));
        }
        Ok(())
    }
}

/// Everything the generator used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True parameters with each `C^K` normalized to unit norm.
    pub params_true: ModelParams,
    pub adjacency_true: Vec<Vec<bool>>,
    pub order: Vec<usize>,
    /// Raw edge coefficients `c_ij` (zero off the support).
    #[serde(default)]
    pub coefficients: Vec<Vec<f64>>,
    /// Sampled latent rows `x^(n)` (`N × M`).
    #[serde(skip)]
    pub latents: Option<Mat>,
}

/// Random DAG: a uniform permutation fixes the causal order, then every
/// order-respecting pair becomes an edge with probability `edge_prob`.
pub fn sample_er_dag<R: Rng + ?Sized>(p: usize, edge_prob: f64, rng: &mut R) -> (Vec<Vec<bool>>, Vec<usize>) {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let mut adj = vec![vec![false; p]; p];
    for a in 0..p {
        for b in a + 1..p {
            if rng.gen::<f64>() < edge_prob {
                adj[order[a]][order[b]] = true;
            }
        }
    }
    (adj, order)
}

/// Fourier functions `ν_1 = 1`, `ν_{2u} = cos(2πut)`, `ν_{2u+1} = sin(2πut)`
/// evaluated on `grid`, one column per function.
pub fn fourier_raw(grid: &[f64], k: usize) -> Mat {
    Mat::from_fn(grid.len(), k, |i, c| {
        let t = grid[i];
        if c == 0 {
            1.0
        } else {
            let u = c.div_ceil(2);
            let arg = 2.0 * std::f64::consts::PI * u as f64 * t;
            if c % 2 == 1 {
                arg.cos()
            } else {
                arg.sin()
            }
        }
    })
}

/// Orthonormalized `T × K` Fourier basis on the uniform grid.
pub fn fourier_basis(t: usize, k: usize) -> Mat {
    orthonormalize_columns(&fourier_raw(&uniform_grid(t), k))
}

/// Sample a dataset and its ground truth.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(FunctionalDataset, GroundTruth)> {
    cfg.validate()?;
    let s = &cfg.shape;
    let p = s.p;
    let k = s.k[0];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (adj, order) = sample_er_dag(p, cfg.edge_prob, &mut rng);

    let mut params = ModelParams::empty(s.clone(), EdgeMask::full(p))?;
    let basis = fourier_basis(s.t, k);
    for b in params.b.iter_mut() {
        *b = basis.clone();
    }
    params.r2 = vec![cfg.r2_true; s.n_series()];
    params.omega2 = cfg.omega2_true;
    let mut coefficients = vec![vec![0.0; p]; p];
    let sqrt_k = (k as f64).sqrt();
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            if adj[i][j] {
                let mag = rng.gen_range(cfg.coef_low..=cfg.coef_high);
                let c = if rng.gen::<bool>() { mag } else { -mag };
                coefficients[i][j] = c;
                *params.cl_mut(i, j) = Mat::from_element(s.l[i], s.l[j], c * sqrt_k);
                *params.ck_mut(i, j) = Mat::identity(k, k) / sqrt_k;
            } else {
                params.cl_mut(i, j).fill(0.0);
                *params.ck_mut(i, j) = Mat::zeros(k, k);
            }
        }
    }

    let c = params.transition()?;
    let m = s.m();
    let latent_sd = cfg.omega2_true.sqrt();
    let noise_sd = cfg.r2_true.sqrt();
    let mut x = Mat::zeros(s.n, m);
    let mut values = Mat::zeros(s.n, s.obs_len());
    for n in 0..s.n {
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed);
        srng.set_stream(n as u64 + 1);
        let latent = Normal::new(0.0, latent_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
        let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
        let xi: Vec<f64> = (0..m)
            .map(|_| if latent_sd > 0.0 { latent.sample(&mut srng) } else { 0.0 })
            .collect();
        // x = ξ + x C, filled node by node along the causal order.
        for &j in &order {
            let off = s.block_offset(j);
            for a in 0..s.block_len(j) {
                let col = off + a;
                let mut v = xi[col];
                for &i in &order {
                    if adj[i][j] {
                        let oi = s.block_offset(i);
                        for b in 0..s.block_len(i) {
                            v += x[(n, oi + b)] * c[(oi + b, col)];
                        }
                    }
                }
                x[(n, col)] = v;
            }
        }
        for (j, l) in s.series() {
            let coef = x.view((n, s.latent_offset(j, l)), (1, k)).transpose();
            let mean = &params.b[j] * coef;
            let off = s.obs_offset(j, l);
            for t in 0..s.t {
                let e = if noise_sd > 0.0 { noise.sample(&mut srng) } else { 0.0 };
                values[(n, off + t)] = mean[t] + e;
            }
        }
    }

    let data = FunctionalDataset::new(s.clone(), values)?;
    Ok((
        data,
        GroundTruth {
            params_true: params,
            adjacency_true: adj,
            order,
            coefficients,
            latents: Some(x),
        },
    ))
}
