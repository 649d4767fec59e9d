//! M-step solvers: basis and variance updates, the acyclicity function, and
//! the augmented-Lagrangian group-lasso solver for the transition blocks.

mod basis;
mod notears;
mod solver;
mod variance;

pub use basis::{basis_target, update_basis, update_basis_weighted};
pub use notears::notears_h;
pub use solver::{
    objective_g, objective_g_grad, prox_group_lasso, solve_c, AugmentedObjective, BlockLayout, SolveOutput, SolverConfig,
};
pub use variance::{update_omega, update_r};
