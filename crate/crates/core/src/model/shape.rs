use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of a problem and the layout of the stacked latent vector.
///
/// The latent vector is node-major, then function-major, then coefficient:
/// position `i` inside node `j`'s block is function `i / K_j` and
/// coefficient `i % K_j` (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

impl ProblemShape {
    pub fn new(l: Vec<usize>, k: Vec<usize>, t: usize, n: usize) -> Result<Self> {
        let shape = Self {
            p: l.len(),
            l,
            k,
            t,
            n,
        };
        shape.validate()?;
        Ok(shape)
    }

    /// Uniform shape with `L_j = l0` and `K_j = k0` for every node.
    pub fn uniform(p: usize, l0: usize, k0: usize, t: usize, n: usize) -> Result<Self> {
        Self::new(vec![l0; p], vec![k0; p], t, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Shape("P must be at least 1".into()));
        }
        if self.l.len() != self.p || self.k.len() != self.p {
            return Err(Error::Shape(format!(
                "L and K must have P = {} entries (got {} and {})",
                self.p,
                self.l.len(),
                self.k.len()
            )));
        }
        if self.t == 0 || self.n == 0 {
            return Err(Error::Shape("T and N must be at least 1".into()));
        }
        for j in 0..self.p {
            if self.l[j] == 0 || self.k[j] == 0 {
                return Err(Error::Shape(format!("node {j}: L_j and K_j must be at least 1")));
            }
            if self.k[j] >= self.t {
                return Err(Error::Shape(format!(
                    "node {j}: K_j = {} must be smaller than T = {}",
                    self.k[j], self.t
                )));
            }
        }
        Ok(())
    }

    /// Total latent dimension `M = Σ L_j K_j`.
    pub fn m(&self) -> usize {
        (0..self.p).map(|j| self.block_len(j)).sum()
    }

    /// Length `L_j K_j` of node `j`'s latent block.
    pub fn block_len(&self, j: usize) -> usize {
        self.l[j] * self.k[j]
    }

    /// Offset of node `j`'s latent block.
    pub fn block_offset(&self, j: usize) -> usize {
        (0..j).map(|i| self.block_len(i)).sum()
    }

    /// Offset of the `(j, l)` coefficient sub-block inside the latent vector.
    pub fn latent_offset(&self, j: usize, l: usize) -> usize {
        self.block_offset(j) + l * self.k[j]
    }

    /// Latent index of node `j`, function `l`, coefficient `k` (all 0-based).
    pub fn latent_index(&self, j: usize, l: usize, k: usize) -> usize {
        self.latent_offset(j, l) + k
    }

    /// Inverse of the flattening rule inside a node block: `(function, coefficient)`.
    pub fn split_block_index(&self, j: usize, i: usize) -> (usize, usize) {
        (i / self.k[j], i % self.k[j])
    }

    /// Number of observed series per sample, `Σ L_j`.
    pub fn n_series(&self) -> usize {
        self.l.iter().sum()
    }

    /// Flat index of series `(j, l)` in `(j, l)` order; also the index into `r2`.
    pub fn series_index(&self, j: usize, l: usize) -> usize {
        self.l[..j].iter().sum::<usize>() + l
    }

    /// Iterate `(j, l)` pairs in flat series order.
    pub fn series(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.p).flat_map(move |j| (0..self.l[j]).map(move |l| (j, l)))
    }

    /// Length `T Σ L_j` of one stacked observation vector.
    pub fn obs_len(&self) -> usize {
        self.n_series() * self.t
    }

    /// Offset of series `(j, l)` inside a stacked observation vector.
    pub fn obs_offset(&self, j: usize, l: usize) -> usize {
        self.series_index(j, l) * self.t
    }

    /// Same shape with a different sample count.
    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Same shape with different basis counts.
    pub fn with_k(&self, k: &[usize]) -> Self {
        Self {
            k: k.to_vec(),
            ..self.clone()
        }
    }

    /// Shapes agree on everything except the sample count.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.p == other.p && self.l == other.l && self.k == other.k && self.t == other.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattening_rule() {
        let s = ProblemShape::new(vec![2, 3], vec![3, 2], 10, 1).unwrap();
        assert_eq!(s.m(), 12);
        assert_eq!(s.block_offset(1), 6);
        // 1-based i = 5 in node 1 is function 2, coefficient 2.
        assert_eq!(s.split_block_index(0, 4), (1, 1));
        assert_eq!(s.latent_index(1, 2, 1), 11);
        assert_eq!(s.series_index(1, 1), 3);
        assert_eq!(s.obs_offset(1, 0), 20);
    }

    #[test]
    fn rejects_basis_count_not_below_grid() {
        assert!(ProblemShape::uniform(2, 1, 5, 5, 3).is_err());
        assert!(ProblemShape::uniform(0, 1, 1, 5, 3).is_err());
        assert!(ProblemShape::new(vec![1, 0], vec![1, 1], 5, 3).is_err());
    }
}
