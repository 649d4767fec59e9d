//! Recovery metrics: directed-edge scores, rotation alignment of the
//! estimated bases, aligned transition error and reconstruction MSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{expected_residual_energy, posterior_direct};
use crate::linalg::{frob_sq, kron, polar_factor, Mat};
use crate::model::{assemble_c, FunctionalDataset, ModelParams};
use crate::synth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Directed-edge confusion counts and scores. Empty denominators count as a
/// vacuous 1 for precision and recall; F1 is 0 when both are 0.
///
/// SHD counts, over unordered node pairs, every missing, extra or reversed
/// edge once.
pub fn edge_metrics(est: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<EdgeMetrics> {
    let p = truth.len();
    if est.len() != p || est.iter().chain(truth).any(|r| r.len() != p) {
        return Err(Error::Dimension("estimated and true graphs differ in size".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            match (est[i][j], truth[i][j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let mut shd = 0;
    for i in 0..p {
        for j in i + 1..p {
            if (est[i][j], est[j][i]) != (truth[i][j], truth[j][i]) {
                shd += 1;
            }
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EdgeMetrics {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
        shd,
    })
}

/// Per-node orthogonal `Q_j` minimizing `‖B̂_j Q - B*_j‖_F`: the polar factor
/// of `B̂_jᵀ B*_j`.
pub fn procrustes_align(b_est: &[Mat], b_true: &[Mat]) -> Result<Vec<Mat>> {
    if b_est.len() != b_true.len() {
        return Err(Error::Dimension("basis lists differ in length".into()));
    }
    b_est
        .iter()
        .zip(b_true)
        .enumerate()
        .map(|(j, (e, t))| {
            if e.shape() != t.shape() {
                return Err(Error::Dimension(format!("basis {j}: {:?} vs {:?}", e.shape(), t.shape())));
            }
            Ok(polar_factor(&(e.transpose() * t)).0)
        })
        .collect()
}

/// `‖C̃ - C*‖_F²` where `C̃_jk = C^L_jk ⊗ (Q_jᵀ C^K_jk Q_k)` re-expresses the
/// estimate in the true bases' coordinates.
pub fn aligned_c_error(est: &ModelParams, truth: &ModelParams) -> Result<f64> {
    if !est.shape.same_layout(&truth.shape) {
        return Err(Error::Dimension("estimated and true shapes differ".into()));
    }
    let q = procrustes_align(&est.b, &truth.b)?;
    let s = &est.shape;
    let m = s.m();
    let mut c = Mat::zeros(m, m);
    for (i, j) in est.mask.allowed_pairs() {
        let ck = q[i].transpose() * est.ck(i, j) * &q[j];
        let block = kron(est.cl(i, j), &ck);
        c.view_mut((s.block_offset(i), s.block_offset(j)), block.shape())
            .copy_from(&block);
    }
    let c_true = assemble_c(truth, &truth.mask)?;
    Ok(frob_sq(&(c - c_true)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse_est: f64,
    pub mse_true: Option<f64>,
    pub delta: Option<f64>,
}

/// Reconstruction errors per scalar observation. `mse_est` is the posterior
/// expectation of `‖Y - B̂x‖²` under the fitted model; `mse_true` uses the
/// true bases and sampled latents when they are available.
pub fn mse_diagnostics(data: &FunctionalDataset, est: &ModelParams, truth: Option<&GroundTruth>) -> Result<MseReport> {
    let s = &data.shape;
    let denom = (s.n * s.obs_len()) as f64;
    let post = posterior_direct(data, est)?;
    let mse_est = expected_residual_energy(data, &est.b, &post) / denom;
    let mse_true = match truth.and_then(|t| t.latents.as_ref().map(|x| (t, x))) {
        Some((t, x)) => {
            if x.shape() != (s.n, t.params_true.shape.m()) || !t.params_true.shape.same_layout(&s.with_k(&t.params_true.shape.k)) {
                return Err(Error::Dimension("ground-truth latents do not match the dataset".into()));
            }
            let ts = &t.params_true.shape;
            let mut total = 0.0;
            for (j, l) in s.series() {
                let y = data.values.columns(s.obs_offset(j, l), s.t);
                let fitted = x.columns(ts.latent_offset(j, l), ts.k[j]) * t.params_true.b[j].transpose();
                total += frob_sq(&(y - fitted));
            }
            Some(total / denom)
        }
        None => None,
    };
    Ok(MseReport {
        mse_est,
        mse_true,
        delta: mse_true.map(|m| (mse_est - m).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, random_semi_orthogonal};
    use crate::model::ProblemShape;
    use crate::synth::{generate_dataset, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(edges: &[(usize, usize)], p: usize) -> Vec<Vec<bool>> {
        let mut a = vec![vec![false; p]; p];
        for &(i, j) in edges {
            a[i][j] = true;
        }
        a
    }

    #[test]
    fn edge_metric_cases() {
        let t = g(&[(0, 1), (1, 2)], 3);
        let m = edge_metrics(&t, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.shd), (1.0, 1.0, 1.0, 0));

        let m = edge_metrics(&g(&[(0, 1)], 3), &t).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);

        // Hand-counted: TP {0→1, 1→2}, FP {0→3}, FN {2→3}.
        let truth = g(&[(0, 1), (1, 2), (2, 3)], 4);
        let est = g(&[(0, 1), (1, 2), (0, 3)], 4);
        let m = edge_metrics(&est, &truth).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.shd, 2);

        let m = edge_metrics(&g(&[], 3), &t).unwrap();
        assert_eq!(m.f1, 0.0);
        let m = edge_metrics(&g(&[(1, 0)], 2), &g(&[(0, 1)], 2)).unwrap();
        assert_eq!(m.shd, 1);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_semi_orthogonal(10, 3, &mut rng);
        let q0 = random_semi_orthogonal(3, 3, &mut rng);
        let q = procrustes_align(std::slice::from_ref(&b), std::slice::from_ref(&b)).unwrap();
        assert!((&q[0] - Mat::identity(3, 3)).amax() < 1e-12);
        let q = procrustes_align(&[&b * &q0], std::slice::from_ref(&b)).unwrap();
        assert!((&q[0] - q0.transpose()).amax() < 1e-10);
        assert!((&b * &q0 * &q[0] - &b).norm() < 1e-10);
        assert!(orthonormality_error(&q[0]) < 1e-12);
    }

    #[test]
    fn aligned_error_cases() {
        let cfg = SynthConfig {
            shape: ProblemShape::uniform(3, 2, 2, 9, 4).unwrap(),
            edge_prob: 1.0,
            seed: 8,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_dataset(&cfg).unwrap();
        let p = &truth.params_true;
        assert!(aligned_c_error(p, p).unwrap() < 1e-20);

        let mut zero = p.clone();
        for b in zero.cl_blocks.iter_mut() {
            b.fill(0.0);
        }
        let c = p.transition().unwrap();
        assert!((aligned_c_error(&zero, p).unwrap() - frob_sq(&c)).abs() < 1e-10);
    }

    #[test]
    fn zero_model_mse_is_signal_energy() {
        let cfg = SynthConfig {
            shape: ProblemShape::uniform(2, 1, 2, 8, 30).unwrap(),
            seed: 2,
            ..SynthConfig::default()
        };
        let (data, truth) = generate_dataset(&cfg).unwrap();
        let mut zero = truth.params_true.clone();
        // A vanishing prior collapses the posterior to zero.
        zero.omega2 = 1e-300;
        for b in zero.cl_blocks.iter_mut() {
            b.fill(0.0);
        }
        let rep = mse_diagnostics(&data, &zero, None).unwrap();
        let energy = data.values.norm_squared() / data.values.len() as f64;
        assert!((rep.mse_est - energy).abs() < 1e-6 * energy);
        assert!(rep.mse_true.is_none());
    }
}
