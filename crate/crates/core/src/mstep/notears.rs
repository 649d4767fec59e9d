use crate::linalg::{expm, Mat};

/// Acyclicity function `h(W) = tr(exp(W ∘ W)) - P` and its gradient
/// `exp(W ∘ W)ᵀ ∘ 2W`.
pub fn notears_h(w: &Mat) -> (f64, Mat) {
    let p = w.nrows();
    let sq = w.component_mul(w);
    let e = expm(&sq);
    let value = e.trace() - p as f64;
    let grad = e.transpose().component_mul(w) * 2.0;
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_triangular_are_acyclic() {
        assert_eq!(notears_h(&Mat::zeros(3, 3)).0, 0.0);
        let w = Mat::from_row_slice(3, 3, &[0.0, 5.0, -3.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0]);
        assert!(notears_h(&w).0.abs() < 1e-9);
    }

    #[test]
    fn two_cycle_value() {
        let w = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let expected = 2.0 * 1f64.cosh() - 2.0;
        assert!((notears_h(&w).0 - expected).abs() < 1e-12);
        assert!((expected - 1.08616).abs() < 1e-5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let w = Mat::from_row_slice(3, 3, &[0.0, 0.4, -0.3, 0.2, 0.0, 0.5, -0.6, 0.1, 0.0]);
        let (_, g) = notears_h(&w);
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut wp = w.clone();
                wp[(i, j)] += eps;
                let mut wm = w.clone();
                wm[(i, j)] -= eps;
                let fd = (notears_h(&wp).0 - notears_h(&wm).0) / (2.0 * eps);
                assert!((fd - g[(i, j)]).abs() < 1e-8, "({i},{j}): {fd} vs {}", g[(i, j)]);
            }
        }
    }
}
