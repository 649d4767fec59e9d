//! Dense helpers shared by the solvers: matrix exponential, polar factor,
//! orthonormalization and a few Frobenius utilities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub fn frob_sq(a: &Mat) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Matrix exponential (nalgebra's scaling-and-squaring Padé).
pub fn expm(a: &Mat) -> Mat {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    if a.is_empty() {
        return Mat::zeros(0, 0);
    }
    a.exp()
}

/// Polar factor `U Vᵀ` of a tall matrix via thin SVD. Returns the factor
/// and the smallest singular value.
pub fn polar_factor(a: &Mat) -> (Mat, f64) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    (u * v_t, smin)
}

/// Orthonormalize the columns of `a` with Householder QR, fixing signs so
/// the diagonal of R is nonnegative.
pub fn orthonormalize_columns(a: &Mat) -> Mat {
    let k = a.ncols();
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `rows × cols` matrix with orthonormal columns drawn from the Haar
/// measure (QR of a Gaussian matrix).
pub fn random_semi_orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    orthonormalize_columns(&g)
}

/// Top-`k` left singular vectors of `a`, ordered by decreasing singular
/// value, with the sign of each column fixed so its largest-magnitude
/// entry is positive. Also returns the singular values.
pub fn top_left_singular(a: &Mat, k: usize) -> (Mat, Vec<f64>) {
    let rows = a.nrows();
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let take = k.min(idx.len());
    let mut out = Mat::zeros(rows, take);
    let mut sv = Vec::with_capacity(take);
    for (c, &i) in idx.iter().take(take).enumerate() {
        let mut col = u.column(i).clone_owned();
        let pivot = col
            .iter()
            .copied()
            .max_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        out.set_column(c, &col);
        sv.push(svd.singular_values[i]);
    }
    (out, sv)
}

/// Orthonormal `rows(a) × k` basis of the leading left singular subspace of
/// `a`. Directions with singular value below `1e-12 · max(σ₁, 1)` are
/// replaced by random directions orthogonal to the kept ones; the flag
/// reports whether any padding happened.
pub fn principal_basis<R: Rng + ?Sized>(a: &Mat, k: usize, rng: &mut R) -> (Mat, bool) {
    let (u, sv) = top_left_singular(a, k);
    let cutoff = 1e-12 * sv.first().copied().unwrap_or(0.0).max(1.0);
    let kept = sv.iter().take_while(|&&s| s > cutoff).count();
    if kept == k {
        return (u, false);
    }
    let rows = a.nrows();
    let mut out = Mat::zeros(rows, k);
    out.columns_mut(0, kept).copy_from(&u.columns(0, kept));
    let head = u.columns(0, kept).clone_owned();
    let mut g = Mat::from_fn(rows, k - kept, |_, _| rng.sample(StandardNormal));
    if kept > 0 {
        // Two passes of projection keep the padding numerically orthogonal.
        for _ in 0..2 {
            g -= &head * (head.transpose() * &g);
        }
    }
    out.columns_mut(kept, k - kept).copy_from(&orthonormalize_columns(&g));
    (out, true)
}

/// Nearest Kronecker product: `(X, Y)` with `X` of size `m1 × n1` and `Y`
/// of size `m2 × n2` minimizing `‖A - X ⊗ Y‖_F`, from the leading singular
/// pair of the rearranged matrix. `Y` has unit norm (or is zero).
pub fn nearest_kronecker(a: &Mat, (m1, n1): (usize, usize), (m2, n2): (usize, usize)) -> (Mat, Mat) {
    assert_eq!(a.shape(), (m1 * m2, n1 * n2), "block dimensions do not tile the matrix");
    let r = Mat::from_fn(m1 * n1, m2 * n2, |row, col| {
        let (i, j) = (row / n1, row % n1);
        let (k, l) = (col / n2, col % n2);
        a[(i * m2 + k, j * n2 + l)]
    });
    if r.iter().all(|&v| v == 0.0) {
        return (Mat::zeros(m1, n1), Mat::zeros(m2, n2));
    }
    let svd = r.svd(true, true);
    let best = svd.singular_values.imax();
    let sigma = svd.singular_values[best];
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V");
    let x = Mat::from_fn(m1, n1, |i, j| sigma * u[(i * n1 + j, best)]);
    let y = Mat::from_fn(m2, n2, |k, l| vt[(best, k * n2 + l)]);
    (x, y)
}

/// Largest absolute deviation of `aᵀa` from the identity.
pub fn orthonormality_error(a: &Mat) -> f64 {
    let g = a.transpose() * a;
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
