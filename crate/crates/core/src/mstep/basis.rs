use crate::error::{Error, Result};
use crate::linalg::{polar_factor, Mat};
use crate::model::{FunctionalDataset, PosteriorSummary};

/// `A_j = (1/N) Σ_n Σ_l w_l Y_jl^(n) û_jl^(n)ᵀ`, a `T × K_j` matrix.
pub fn basis_target(data: &FunctionalDataset, post: &PosteriorSummary, j: usize, weights: &[f64]) -> Mat {
    let s = &data.shape;
    let mut a = Mat::zeros(s.t, s.k[j]);
    for (l, &w) in weights.iter().enumerate().take(s.l[j]) {
        let y = data.values.columns(s.obs_offset(j, l), s.t);
        let u = post.u_hat.columns(s.latent_offset(j, l), s.k[j]);
        a += y.transpose() * u * w;
    }
    a / s.n as f64
}

fn polar_update(a: &Mat, node: usize) -> Result<Mat> {
    let (factor, smin) = polar_factor(a);
    if !(smin.is_finite() && smin >= 1e-12) {
        return Err(Error::DegenerateBasis { node, sigma: smin });
    }
    Ok(factor)
}

/// Orthonormal basis update by polar decomposition of `A_j`: the
/// semi-orthogonal `B_j` maximizing `tr(B_jᵀ A_j)`. Nodes whose `A_j` is
/// rank deficient get an error; callers keep the previous basis for them.
pub fn update_basis(data: &FunctionalDataset, post: &PosteriorSummary) -> Vec<Result<Mat>> {
    (0..data.shape.p)
        .map(|j| {
            let ones = vec![1.0; data.shape.l[j]];
            polar_update(&basis_target(data, post, j, &ones), j)
        })
        .collect()
}

/// Like [`update_basis`], but each function's contribution is weighted by
/// `1 / r²_jl`, which makes the result the exact maximizer of the expected
/// log-likelihood when the noise variances differ across functions.
pub fn update_basis_weighted(data: &FunctionalDataset, post: &PosteriorSummary, r2: &[f64]) -> Vec<Result<Mat>> {
    let s = &data.shape;
    (0..s.p)
        .map(|j| {
            let w: Vec<f64> = (0..s.l[j])
                .map(|l| 1.0 / r2[s.series_index(j, l)].max(crate::inference::R2_FLOOR))
                .collect();
            polar_update(&basis_target(data, post, j, &w), j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, random_semi_orthogonal};
    use crate::model::ProblemShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn isometry_and_scaling_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b0 = random_semi_orthogonal(9, 3, &mut rng);
        assert!(max_abs_diff(&polar_update(&b0, 0).unwrap(), &b0) < 1e-12);
        assert!(max_abs_diff(&polar_update(&(&b0 * 5.0), 0).unwrap(), &b0) < 1e-12);
    }

    #[test]
    fn rank_deficient_target_is_flagged() {
        let mut a = Mat::zeros(6, 2);
        a[(0, 0)] = 1.0;
        assert!(matches!(polar_update(&a, 3), Err(Error::DegenerateBasis { node: 3, .. })));
    }

    #[test]
    fn target_accumulates_over_functions_and_samples() {
        let shape = ProblemShape::new(vec![2], vec![1], 3, 2).unwrap();
        let values = Mat::from_row_slice(2, 6, &[1., 0., 0., 0., 1., 0., 2., 0., 0., 0., 0., 0.]);
        let data = FunctionalDataset::new(shape, values).unwrap();
        let post = PosteriorSummary {
            u_hat: Mat::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 0.0]),
            sigma_hat: Mat::zeros(2, 2),
        };
        let a = basis_target(&data, &post, 0, &[1.0, 1.0]);
        assert_eq!(a, Mat::from_column_slice(3, 1, &[1.5, 1.0, 0.0]));
    }
}
