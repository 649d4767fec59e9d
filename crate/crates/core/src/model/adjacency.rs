use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::linalg::Mat;

/// Allowed directed edges between nodes. The diagonal is always forbidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<bool>>", into = "Vec<Vec<bool>>")]
pub struct EdgeMask {
    p: usize,
    allowed: Vec<bool>,
}

impl EdgeMask {
    /// Every off-diagonal edge allowed.
    pub fn full(p: usize) -> Self {
        let allowed = (0..p * p).map(|idx| idx / p != idx % p).collect();
        Self { p, allowed }
    }

    /// No edge allowed.
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            allowed: vec![false; p * p],
        }
    }

    pub fn from_fn(p: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..p * p)
            .map(|idx| {
                let (i, j) = (idx / p, idx % p);
                i != j && f(i, j)
            })
            .collect();
        Self { p, allowed }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.p + to]
    }

    pub fn set(&mut self, from: usize, to: usize, allowed: bool) {
        if from != to {
            self.allowed[from * self.p + to] = allowed;
        }
    }

    pub fn allowed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.p * self.p)
            .filter(|&idx| self.allowed[idx])
            .map(move |idx| (idx / self.p, idx % self.p))
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.p)
            .map(|i| (0..self.p).map(|j| self.allows(i, j)).collect())
            .collect()
    }
}

impl From<Vec<Vec<bool>>> for EdgeMask {
    fn from(rows: Vec<Vec<bool>>) -> Self {
        let p = rows.len();
        EdgeMask::from_fn(p, |i, j| rows[i].get(j).copied().unwrap_or(false))
    }
}

impl From<EdgeMask> for Vec<Vec<bool>> {
    fn from(mask: EdgeMask) -> Self {
        mask.to_rows()
    }
}

/// Node-level summary of the transition matrix: `W_ij = ‖C_ij‖_F`, zero on
/// masked blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AdjacencyFile", into = "AdjacencyFile")]
pub struct BlockAdjacency {
    pub w: Mat,
    pub mask: EdgeMask,
}

impl BlockAdjacency {
    /// Boolean support of `|W| > threshold`.
    pub fn support(&self, threshold: f64) -> Vec<Vec<bool>> {
        let p = self.w.nrows();
        (0..p)
            .map(|i| (0..p).map(|j| self.w[(i, j)].abs() > threshold).collect())
            .collect()
    }

    /// `W` with entries at or below `threshold` set to zero.
    pub fn thresholded(&self, threshold: f64) -> Mat {
        self.w.map(|v| if v.abs() > threshold { v } else { 0.0 })
    }
}

#[derive(Serialize, Deserialize)]
struct AdjacencyFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    mask: EdgeMask,
}

impl From<BlockAdjacency> for AdjacencyFile {
    fn from(a: BlockAdjacency) -> Self {
        let p = a.w.nrows();
        Self {
            w: (0..p).map(|i| (0..p).map(|j| a.w[(i, j)]).collect()).collect(),
            mask: a.mask,
        }
    }
}

impl TryFrom<AdjacencyFile> for BlockAdjacency {
    type Error = String;

    fn try_from(f: AdjacencyFile) -> std::result::Result<Self, String> {
        let p = f.mask.p();
        if f.w.len() != p || f.w.iter().any(|r| r.len() != p) {
            return Err(format!("W must be {p}x{p}"));
        }
        Ok(Self {
            w: Mat::from_fn(p, p, |i, j| f.w[i][j]),
            mask: f.mask,
        })
    }
}

/// `W_ij = ‖C^L_ij‖_F · ‖C^K_ij‖_F`, the Frobenius norm of the Kronecker block.
pub fn compute_w(params: &ModelParams) -> BlockAdjacency {
    let p = params.shape.p;
    let mut w = Mat::zeros(p, p);
    for (i, j) in params.mask.allowed_pairs() {
        w[(i, j)] = params.cl(i, j).norm() * params.ck(i, j).norm();
    }
    BlockAdjacency {
        w,
        mask: params.mask.clone(),
    }
}
