#![allow(dead_code)]

use multifun_dag::linalg::{random_semi_orthogonal, Mat};
use multifun_dag::{EdgeMask, FunctionalDataset, ModelParams, ProblemShape};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random Haar-ish orthogonal matrix.
pub fn orthogonal<R: Rng>(k: usize, rng: &mut R) -> Mat {
    random_semi_orthogonal(k, k, rng)
}

/// Random acyclic parameters on a random shape with `p` nodes, per-node
/// `L_j, K_j ≤ 3`, `T ≤ 16`, plus Gaussian data for them.
pub fn random_instance<R: Rng>(p: usize, rng: &mut R) -> (FunctionalDataset, ModelParams) {
    let t = rng.gen_range(4..=16);
    let l: Vec<usize> = (0..p).map(|_| rng.gen_range(1..=3)).collect();
    let k: Vec<usize> = (0..p).map(|_| rng.gen_range(1..=3)).collect();
    let n = rng.gen_range(2..=6);
    let shape = ProblemShape::new(l.clone(), k.clone(), t, n).unwrap();

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let mut params = ModelParams::empty(shape.clone(), EdgeMask::full(p)).unwrap();
    for a in 0..p {
        for b in a + 1..p {
            let (i, j) = (order[a], order[b]);
            if rng.gen_bool(0.6) {
                *params.cl_mut(i, j) = gaussian(l[i], l[j], rng);
                *params.ck_mut(i, j) = gaussian(k[i], k[j], rng) * 0.5;
            }
        }
    }
    params.b = (0..p).map(|j| random_semi_orthogonal(t, k[j], rng)).collect();
    params.r2 = (0..shape.n_series()).map(|_| rng.gen_range(0.05..1.0)).collect();
    params.omega2 = rng.gen_range(0.3..2.0);
    params.validate().unwrap();

    let values = gaussian(n, shape.obs_len(), rng);
    (FunctionalDataset::new(shape, values).unwrap(), params)
}

/// Three-colour depth-first search for a directed cycle.
pub fn dfs_acyclic(adj: &[Vec<bool>]) -> bool {
    fn visit(v: usize, adj: &[Vec<bool>], state: &mut [u8]) -> bool {
        state[v] = 1;
        for (w, &e) in adj[v].iter().enumerate() {
            if !e {
                continue;
            }
            if state[w] == 1 || (state[w] == 0 && !visit(w, adj, state)) {
                return false;
            }
        }
        state[v] = 2;
        true
    }
    let mut state = vec![0u8; adj.len()];
    (0..adj.len()).all(|v| state[v] != 0 || visit(v, adj, &mut state))
}
