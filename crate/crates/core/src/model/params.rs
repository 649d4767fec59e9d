use serde::{Deserialize, Serialize};

use super::{EdgeMask, ProblemShape};
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, kron, orthonormality_error, Mat};

/// Learnable state of the EM algorithm.
///
/// Transition blocks are stored per ordered node pair `(from, to)` at index
/// `from * P + to`; the assembled block is `C^L ⊗ C^K`. Diagonal pairs and
/// masked pairs hold zero matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ModelParams {
    pub shape: ProblemShape,
    pub cl_blocks: Vec<Mat>,
    pub ck_blocks: Vec<Mat>,
    /// Per-node `T × K_j` bases with orthonormal columns.
    pub b: Vec<Mat>,
    /// Observation noise variances in `(j, l)` order.
    pub r2: Vec<f64>,
    pub omega2: f64,
    pub mask: EdgeMask,
}

/// Unit-norm `K_from × K_to` starting block: a rectangular identity scaled to
/// Frobenius norm one.
pub fn unit_ck(k_from: usize, k_to: usize) -> Mat {
    let d = k_from.min(k_to);
    Mat::from_fn(k_from, k_to, |a, b| if a == b { 1.0 } else { 0.0 }) / (d as f64).sqrt()
}

impl ModelParams {
    /// Empty graph with unit-norm `C^K` on allowed blocks, zero `C^L`,
    /// canonical-axis bases, unit variances.
    pub fn empty(shape: ProblemShape, mask: EdgeMask) -> Result<Self> {
        shape.validate()?;
        let p = shape.p;
        if mask.p() != p {
            return Err(Error::Dimension(format!("mask is {}x{0}, expected P = {p}", mask.p())));
        }
        let mut cl_blocks = Vec::with_capacity(p * p);
        let mut ck_blocks = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                cl_blocks.push(Mat::zeros(shape.l[i], shape.l[j]));
                if mask.allows(i, j) {
                    ck_blocks.push(unit_ck(shape.k[i], shape.k[j]));
                } else {
                    ck_blocks.push(Mat::zeros(shape.k[i], shape.k[j]));
                }
            }
        }
        let b = (0..p)
            .map(|j| Mat::from_fn(shape.t, shape.k[j], |r, c| if r == c { 1.0 } else { 0.0 }))
            .collect();
        let r2 = vec![1.0; shape.n_series()];
        Ok(Self {
            shape,
            cl_blocks,
            ck_blocks,
            b,
            r2,
            omega2: 1.0,
            mask,
        })
    }

    pub fn cl(&self, from: usize, to: usize) -> &Mat {
        &self.cl_blocks[from * self.shape.p + to]
    }

    pub fn ck(&self, from: usize, to: usize) -> &Mat {
        &self.ck_blocks[from * self.shape.p + to]
    }

    pub fn cl_mut(&mut self, from: usize, to: usize) -> &mut Mat {
        let p = self.shape.p;
        &mut self.cl_blocks[from * p + to]
    }

    pub fn ck_mut(&mut self, from: usize, to: usize) -> &mut Mat {
        let p = self.shape.p;
        &mut self.ck_blocks[from * p + to]
    }

    pub fn r2_of(&self, j: usize, l: usize) -> f64 {
        self.r2[self.shape.series_index(j, l)]
    }

    /// Assembled transition matrix under this model's own mask.
    pub fn transition(&self) -> Result<Mat> {
        assemble_c(self, &self.mask)
    }

    /// Check block dimensions, orthonormality of the bases, and variances.
    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        s.validate()?;
        let p = s.p;
        if self.cl_blocks.len() != p * p || self.ck_blocks.len() != p * p {
            return Err(Error::Dimension(format!("expected {} transition blocks", p * p)));
        }
        if self.mask.p() != p {
            return Err(Error::Dimension("mask size does not match P".into()));
        }
        for i in 0..p {
            for j in 0..p {
                let cl = self.cl(i, j);
                let ck = self.ck(i, j);
                if cl.shape() != (s.l[i], s.l[j]) {
                    return Err(Error::Dimension(format!(
                        "CL block ({i},{j}) is {:?}, expected ({}, {})",
                        cl.shape(),
                        s.l[i],
                        s.l[j]
                    )));
                }
                if ck.shape() != (s.k[i], s.k[j]) {
                    return Err(Error::Dimension(format!(
                        "CK block ({i},{j}) is {:?}, expected ({}, {})",
                        ck.shape(),
                        s.k[i],
                        s.k[j]
                    )));
                }
            }
        }
        if self.b.len() != p {
            return Err(Error::Dimension("expected one basis per node".into()));
        }
        for (j, b) in self.b.iter().enumerate() {
            if b.shape() != (s.t, s.k[j]) {
                return Err(Error::Dimension(format!(
                    "basis {j} is {:?}, expected ({}, {})",
                    b.shape(),
                    s.t,
                    s.k[j]
                )));
            }
            let err = orthonormality_error(b);
            if err > 1e-8 {
                return Err(Error::Input(format!(
                    "basis {j} is not orthonormal (max |BᵀB - I| = {err:e})"
                )));
            }
        }
        if self.r2.len() != s.n_series() {
            return Err(Error::Dimension(format!(
                "r2 has {} entries, expected {}",
                self.r2.len(),
                s.n_series()
            )));
        }
        if self.r2.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input("r2 entries must be finite and nonnegative".into()));
        }
        if !(self.omega2.is_finite() && self.omega2 > 0.0) {
            return Err(Error::Input("omega2 must be positive".into()));
        }
        Ok(())
    }

    /// Resolve the Kronecker scale ambiguity: rescale every nonzero `C^K`
    /// block to unit Frobenius norm and fold the scale into `C^L`.
    pub fn normalize_ck(&mut self) {
        for (cl, ck) in self.cl_blocks.iter_mut().zip(self.ck_blocks.iter_mut()) {
            let norm = ck.norm();
            if norm > 0.0 {
                *ck /= norm;
                *cl *= norm;
            }
        }
    }

    /// Zero every block the mask forbids, including the diagonal.
    pub fn apply_mask(&mut self) {
        let p = self.shape.p;
        for i in 0..p {
            for j in 0..p {
                if !self.mask.allows(i, j) {
                    self.cl_blocks[i * p + j].fill(0.0);
                    self.ck_blocks[i * p + j].fill(0.0);
                }
            }
        }
    }

    /// Sum of block Frobenius norms, `‖C‖_{l1/F}`.
    pub fn group_norm(&self) -> f64 {
        self.mask
            .allowed_pairs()
            .map(|(i, j)| self.cl(i, j).norm() * self.ck(i, j).norm())
            .sum()
    }
}

/// Full `M × M` transition matrix with block `(from, to)` equal to
/// `C^L ⊗ C^K`, and zero wherever `mask` forbids the edge.
pub fn assemble_c(params: &ModelParams, mask: &EdgeMask) -> Result<Mat> {
    let s = &params.shape;
    let p = s.p;
    if mask.p() != p || params.cl_blocks.len() != p * p || params.ck_blocks.len() != p * p {
        return Err(Error::Dimension("transition blocks or mask do not match P".into()));
    }
    let m = s.m();
    let mut c = Mat::zeros(m, m);
    for (i, j) in mask.allowed_pairs() {
        let (cl, ck) = (params.cl(i, j), params.ck(i, j));
        if cl.shape() != (s.l[i], s.l[j]) || ck.shape() != (s.k[i], s.k[j]) {
            return Err(Error::Dimension(format!(
                "block ({i},{j}): CL {:?} / CK {:?} do not match the shape",
                cl.shape(),
                ck.shape()
            )));
        }
        let block = kron(cl, ck);
        c.view_mut((s.block_offset(i), s.block_offset(j)), block.shape())
            .copy_from(&block);
    }
    Ok(c)
}

/// `D(Θ, Θ') = sqrt(‖ΔC‖² + ‖ΔB‖² + ‖Δr‖² + (Δω²)²)`, with `C` compared in
/// assembled form so the Kronecker scale ambiguity does not register.
pub fn param_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if !a.shape.same_layout(&b.shape) {
        return Err(Error::Dimension("parameter sets have different shapes".into()));
    }
    let dc = frob_sq(&(a.transition()? - b.transition()?));
    let db: f64 = a.b.iter().zip(&b.b).map(|(x, y)| frob_sq(&(x - y))).sum();
    let dr: f64 = a.r2.iter().zip(&b.r2).map(|(x, y)| (x - y).powi(2)).sum();
    let dw = (a.omega2 - b.omega2).powi(2);
    Ok((dc + db + dr + dw).sqrt())
}

fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_mat(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<Mat> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: expected a {nrows}x{ncols} matrix")));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// On-disk model schema. Matrices are nested arrays in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub shape: ProblemShape,
    #[serde(rename = "CL")]
    pub cl: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "CK")]
    pub ck: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub r2: Vec<f64>,
    pub omega2: f64,
    pub mask: EdgeMask,
}

impl From<ModelParams> for ModelFile {
    fn from(params: ModelParams) -> Self {
        let p = params.shape.p;
        let nest = |blocks: &[Mat]| {
            (0..p)
                .map(|i| (0..p).map(|j| mat_rows(&blocks[i * p + j])).collect())
                .collect()
        };
        ModelFile {
            cl: nest(&params.cl_blocks),
            ck: nest(&params.ck_blocks),
            b: params.b.iter().map(mat_rows).collect(),
            r2: params.r2,
            omega2: params.omega2,
            mask: params.mask,
            shape: params.shape,
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let s = file.shape;
        s.validate()?;
        let p = s.p;
        if file.cl.len() != p || file.ck.len() != p || file.cl.iter().chain(&file.ck).any(|r| r.len() != p) {
            return Err(Error::Dimension(format!("CL and CK must be {p}x{p} arrays of blocks")));
        }
        let mut cl_blocks = Vec::with_capacity(p * p);
        let mut ck_blocks = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                cl_blocks.push(rows_mat(&file.cl[i][j], s.l[i], s.l[j], &format!("CL[{i}][{j}]"))?);
                ck_blocks.push(rows_mat(&file.ck[i][j], s.k[i], s.k[j], &format!("CK[{i}][{j}]"))?);
            }
        }
        if file.b.len() != p {
            return Err(Error::Dimension("B must have one matrix per node".into()));
        }
        let b = file
            .b
            .iter()
            .enumerate()
            .map(|(j, rows)| rows_mat(rows, s.t, s.k[j], &format!("B[{j}]")))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams {
            shape: s,
            cl_blocks,
            ck_blocks,
            b,
            r2: file.r2,
            omega2: file.omega2,
            mask: file.mask,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_w;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_node(l: [usize; 2], k: [usize; 2]) -> ModelParams {
        let shape = ProblemShape::new(l.to_vec(), k.to_vec(), 8, 1).unwrap();
        ModelParams::empty(shape, EdgeMask::full(2)).unwrap()
    }

    fn randomize(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for blk in params.cl_blocks.iter_mut().chain(params.ck_blocks.iter_mut()) {
            blk.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        params.apply_mask();
    }

    #[test]
    fn zero_blocks_assemble_to_zero() {
        let mut params = two_node([2, 1], [3, 2]);
        params.ck_blocks.iter_mut().for_each(|b| b.fill(0.0));
        let c = params.transition().unwrap();
        assert_eq!(c.shape(), (8, 8));
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_kronecker_block() {
        let mut params = two_node([1, 2], [1, 1]);
        *params.cl_mut(0, 1) = Mat::from_row_slice(1, 2, &[1.0, 2.0]);
        *params.ck_mut(0, 1) = Mat::from_row_slice(1, 1, &[3.0]);
        let c = params.transition().unwrap();
        assert_eq!(c.view((0, 1), (1, 2)).clone_owned(), Mat::from_row_slice(1, 2, &[3.0, 6.0]));
    }

    #[test]
    fn mask_zeroes_block_regardless_of_values() {
        let mut params = two_node([1, 1], [1, 1]);
        *params.cl_mut(0, 1) = Mat::from_element(1, 1, 4.0);
        *params.ck_mut(0, 1) = Mat::from_element(1, 1, 1.0);
        let mut mask = EdgeMask::full(2);
        mask.set(0, 1, false);
        let c = assemble_c(&params, &mask).unwrap();
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn assemble_rejects_mismatched_blocks() {
        let mut params = two_node([1, 1], [1, 1]);
        *params.cl_mut(0, 1) = Mat::zeros(2, 2);
        assert!(params.transition().is_err());
    }

    #[test]
    fn w_uses_kronecker_norm_identity() {
        let mut params = two_node([1, 1], [2, 2]);
        *params.cl_mut(0, 1) = Mat::from_element(1, 1, 2.0);
        *params.ck_mut(0, 1) = Mat::identity(2, 2);
        *params.cl_mut(1, 0) = Mat::zeros(1, 1);
        let w = compute_w(&params);
        assert!((w.w[(0, 1)] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(w.w[(1, 0)], 0.0);
        assert_eq!(w.w[(0, 0)], 0.0);
    }

    #[test]
    fn w_matches_materialized_block_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = two_node([2, 2], [2, 2]);
        randomize(&mut params, &mut rng);
        let c = params.transition().unwrap();
        let w = compute_w(&params);
        let block = c.view((0, 4), (4, 4)).clone_owned();
        assert!((block.norm() - w.w[(0, 1)]).abs() < 1e-12);
        let total: f64 = w.w.iter().map(|v| v * v).sum();
        assert!((frob_sq(&c) - total).abs() < 1e-10);
    }

    #[test]
    fn normalization_preserves_assembled_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = two_node([2, 3], [3, 2]);
        randomize(&mut params, &mut rng);
        let before = params.transition().unwrap();
        params.normalize_ck();
        let after = params.transition().unwrap();
        assert!(crate::linalg::max_abs_diff(&before, &after) < 1e-12);
        for (i, j) in params.mask.allowed_pairs() {
            assert!((params.ck(i, j).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_basics() {
        let a = two_node([1, 2], [2, 1]);
        let mut b = a.clone();
        assert_eq!(param_distance(&a, &b).unwrap(), 0.0);
        b.omega2 = 2.0;
        assert!((param_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        b.r2[0] = 3.0;
        let d1 = param_distance(&a, &b).unwrap();
        let d2 = param_distance(&b, &a).unwrap();
        assert_eq!(d1, d2);
        let other = two_node([1, 1], [2, 1]);
        assert!(param_distance(&a, &other).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = two_node([2, 1], [2, 3]);
        randomize(&mut params, &mut rng);
        params.r2 = vec![0.5, 0.25, 0.125];
        let json = serde_json::to_string(&params).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn json_rejects_bad_basis() {
        let params = two_node([1, 1], [1, 1]);
        let mut value = serde_json::to_value(&params).unwrap();
        value["B"][0][0][0] = serde_json::json!(2.0);
        assert!(serde_json::from_value::<ModelParams>(value).is_err());
    }
}
