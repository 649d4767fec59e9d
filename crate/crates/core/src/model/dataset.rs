use nalgebra::DVector;

use super::ProblemShape;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// `N` samples of discretized functional observations.
///
/// Row `n` of `values` stacks the series `Y_jl^(n)` in `(j, l)` order, each
/// of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub shape: ProblemShape,
    pub values: Mat,
    pub grid: Vec<f64>,
}

/// `T` equally spaced points covering `[0, 1]`.
pub fn uniform_grid(t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![0.0];
    }
    (0..t).map(|i| i as f64 / (t - 1) as f64).collect()
}

impl FunctionalDataset {
    pub fn new(shape: ProblemShape, values: Mat) -> Result<Self> {
        let grid = uniform_grid(shape.t);
        Self::with_grid(shape, values, grid)
    }

    pub fn with_grid(shape: ProblemShape, values: Mat, grid: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.nrows() != shape.n || values.ncols() != shape.obs_len() {
            return Err(Error::Dimension(format!(
                "values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                shape.n,
                shape.obs_len()
            )));
        }
        if grid.len() != shape.t {
            return Err(Error::Dimension(format!(
                "grid has {} points, expected T = {}",
                grid.len(),
                shape.t
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite observation {v}")));
        }
        if grid.len() > 1 {
            let step = grid[1] - grid[0];
            let tol = 1e-9 * step.abs().max(1.0);
            for w in grid.windows(2) {
                if w[1] <= w[0] || ((w[1] - w[0]) - step).abs() > tol {
                    return Err(Error::Input("grid must be strictly increasing and equally spaced".into()));
                }
            }
        }
        Ok(Self {
            shape,
            values,
            grid,
        })
    }

    /// The series `Y_jl^(n)`.
    pub fn series(&self, n: usize, j: usize, l: usize) -> DVector<f64> {
        let off = self.shape.obs_offset(j, l);
        let t = self.shape.t;
        DVector::from_iterator(t, self.values.view((n, off), (1, t)).iter().copied())
    }

    /// `T × (N L_j)` matrix whose columns are all series of node `j`.
    pub fn node_matrix(&self, j: usize) -> Mat {
        let t = self.shape.t;
        let lj = self.shape.l[j];
        let mut out = Mat::zeros(t, self.shape.n * lj);
        for n in 0..self.shape.n {
            for l in 0..lj {
                let off = self.shape.obs_offset(j, l);
                for s in 0..t {
                    out[(s, n * lj + l)] = self.values[(n, off + s)];
                }
            }
        }
        out
    }

    /// Dataset with every sample repeated `times` times (sample-major).
    pub fn repeated(&self, times: usize) -> Self {
        let n = self.shape.n;
        let values = Mat::from_fn(n * times, self.values.ncols(), |r, c| self.values[(r % n, c)]);
        Self {
            shape: self.shape.with_n(n * times),
            values,
            grid: self.grid.clone(),
        }
    }

    /// Dataset with all observations scaled by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: &self.values * alpha,
            grid: self.grid.clone(),
        }
    }
}
