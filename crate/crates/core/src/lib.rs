//! Causal structure learning among nodes that carry multivariate functional
//! data. Each node's curves are expanded on an orthonormal basis, the basis
//! coefficients follow a linear SEM with Kronecker-factored transition
//! blocks, and the model is fitted by a regularized EM algorithm whose
//! M-step solves an acyclicity-constrained group-lasso problem.

pub mod baselines;
pub mod cli;
pub mod em;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod mstep;
pub mod synth;

pub use em::{fit, fit_from, EStep, FitConfig, FitReport};
pub use error::{Error, Result};
pub use model::{BlockAdjacency, EdgeMask, FunctionalDataset, ModelParams, PosteriorSummary, ProblemShape};
