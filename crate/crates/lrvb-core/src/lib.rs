//! Mean-field variational Bayes (MFVB) with linear-response covariance
//! corrections.
//!
//! Mean-field posteriors notoriously understate posterior uncertainty: the
//! factorized family cannot represent cross-factor covariance, and the factor
//! marginals themselves end up too tight. When every factor is an
//! exponential family with mean parameters `m` and sufficient-statistic
//! covariance `V`, the corrected posterior covariance is available in closed
//! form from the fixed point of coordinate ascent,
//!
//! ```text
//! sigma_hat = (I - V H)^-1 V,        H = d^2 E_q[log p] / dm dm^T,
//! ```
//!
//! which this crate assembles and solves, either densely or by eliminating
//! high-cardinality per-observation ("z") blocks through a Schur complement
//! so the cost stays linear in the number of observations.
//!
//! The crate provides:
//!
//! * [`expfam`] — the exponential families used as variational factors
//!   (univariate/multivariate Gaussian, gamma, Dirichlet, Wishart,
//!   multinoulli) with natural/mean maps, covariance blocks, and entropies;
//! * [`engine`] — assembly of `V` and `H` and the linear-response solves;
//! * [`optimizer`] — generic coordinate ascent over a block layout;
//! * [`models`] — four reference models: a multivariate normal target (where
//!   the correction is exact), a normal-Poisson GLMM, a linear random-effects
//!   model, and a Gaussian mixture, plus a scaling harness;
//! * [`oracle`] — independent validation tools: Gibbs / MH-within-Gibbs
//!   samplers, effective sample size, finite-difference Hessians, and
//!   tensor-grid quadrature.

pub mod artifacts;
pub mod engine;
pub mod error;
pub mod expfam;
pub mod layout;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod oracle;
pub mod special;

pub use engine::{
    assemble_v, function_covariance, function_function_covariance, lrvb_full, lrvb_schur,
    schur_reduce, schur_solve, HessianMatrix, LrvbOptions, LrvbResult, SchurSystem, SigmaScope,
    SolveDiagnostics, ZSolverKind, ZzBlock,
};
pub use error::{Error, Result};
pub use expfam::{mean_from_natural, natural_from_mean, CovBlock, FactorFamily, FactorState};
pub use layout::{BlockLayout, FactorBlock, Partition};
pub use linalg::BlockDiag;
pub use optimizer::{
    check_fixed_point, coordinate_ascent, coordinate_ascent_partial, elbo, FitOptions, FitTrace,
    ModelProblem, UpdateOrder, VariationalState,
};
