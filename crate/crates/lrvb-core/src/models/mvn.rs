//! Multivariate normal "posterior": the exactness benchmark.
//!
//! The target is a fixed D-dimensional Gaussian N(mu, Sigma); the mean-field
//! family is a product of univariate Gaussians. The fit recovers the means
//! exactly (with the well-known too-small marginal variances 1/Lambda_jj),
//! and the linear-response correction restores the full covariance exactly:
//! on the first-moment block, `(I - VH)^-1 V = Lambda^-1 = Sigma`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::engine::{lrvb_full, HessianMatrix, LrvbOptions, ZSolverKind};
use crate::error::{Error, Result};
use crate::expfam::{FactorFamily, FactorState};
use crate::layout::{BlockLayout, LayoutBuilder, Partition};
use crate::optimizer::{
    coordinate_ascent, FitOptions, ModelProblem, VariationalState,
};

/// Mean-field problem targeting a fixed Gaussian.
#[derive(Debug, Clone)]
pub struct MvnProblem {
    mu: DVector<f64>,
    lambda: DMatrix<f64>,
    log_det_lambda: f64,
    layout: BlockLayout,
}

impl MvnProblem {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch("mean/covariance shape mismatch".into()));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("target covariance must be positive definite".into()))?;
        let lambda = chol.inverse();
        let log_det_lambda = -2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
        let mut b = LayoutBuilder::new();
        for j in 0..d {
            b.push_named(
                &format!("theta[{j}]"),
                FactorFamily::GaussianUv,
                Partition::Alpha,
                vec![format!("theta[{j}]"), format!("theta_sq[{j}]")],
            );
        }
        Ok(Self { mu, lambda, log_det_lambda, layout: b.build()? })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// First moments from the stacked mean vector.
    pub fn first_moments(&self, m: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| m[2 * j])
    }
}

impl ModelProblem for MvnProblem {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn initial_state(&self) -> Result<VariationalState> {
        let d = self.dim();
        let factors: Vec<FactorState> = (0..d)
            .map(|_| {
                FactorState::from_mean(FactorFamily::GaussianUv, DVector::from_vec(vec![0.0, 1.0]))
            })
            .collect::<Result<_>>()?;
        VariationalState::from_factors(&self.layout, &factors)
    }

    fn update_factor(&self, state: &mut VariationalState, j: usize) -> Result<()> {
        let d = self.dim();
        // E log N(theta; mu, Lambda^-1) in theta_j given the other means:
        // mean = mu_j - Lambda_jj^-1 sum_{i != j} Lambda_ji (m_i - mu_i).
        let ljj = self.lambda[(j, j)];
        let mut shift = 0.0;
        for i in 0..d {
            if i != j {
                shift += self.lambda[(j, i)] * (state.m[2 * i] - self.mu[i]);
            }
        }
        let mean = self.mu[j] - shift / ljj;
        let var = 1.0 / ljj;
        let f = FactorState::from_mean(
            FactorFamily::GaussianUv,
            DVector::from_vec(vec![mean, mean * mean + var]),
        )?;
        state.set_factor(&self.layout, j, &f)
    }

    fn expected_log_posterior(&self, m: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        // E[(theta_i - mu_i)(theta_j - mu_j)]: off-diagonals factorize over
        // independent factors; diagonals use the second moment.
        let mut quad = 0.0;
        for i in 0..d {
            let mi = m[2 * i];
            let m2i = m[2 * i + 1];
            quad += self.lambda[(i, i)] * (m2i - 2.0 * self.mu[i] * mi + self.mu[i] * self.mu[i]);
            for j in 0..d {
                if j != i {
                    let mj = m[2 * j];
                    quad += self.lambda[(i, j)]
                        * (mi * mj - self.mu[i] * mj - self.mu[j] * mi + self.mu[i] * self.mu[j]);
                }
            }
        }
        let ln_2pi = 1.837_877_066_409_345_3;
        Ok(-0.5 * quad + 0.5 * self.log_det_lambda - 0.5 * d as f64 * ln_2pi)
    }

    fn hessian(&self, _m: &DVector<f64>) -> Result<HessianMatrix> {
        let d = self.dim();
        let mut aa = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    aa[(2 * i, 2 * j)] = -self.lambda[(i, j)];
                }
            }
        }
        HessianMatrix::alpha_only(aa)
    }

    fn z_solver(&self) -> ZSolverKind {
        ZSolverKind::Identity
    }
}

/// One certification case: fit + correct one random target and report errors.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MvnCertifyCase {
    pub dim: usize,
    pub condition_number: f64,
    /// `max_j |m*_j - mu_j|`.
    pub mean_error: f64,
    /// Relative max-abs error of the corrected first-moment covariance block.
    pub cov_rel_error: f64,
    pub sweeps: usize,
}

/// Random SPD covariance with eigenvalues log-uniform on [0.1, 10] (condition
/// number at most 100) and a Haar-random eigenbasis.
pub fn random_target(d: usize, rng: &mut ChaCha8Rng) -> (DVector<f64>, DMatrix<f64>) {
    let mu = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let gauss = DMatrix::from_fn(d, d, |_, _| {
        let g: f64 = rand_distr::StandardNormal.sample(rng);
        g
    });
    let q = gauss.qr().q();
    let eigs = DVector::from_fn(d, |_, _| {
        let u: f64 = rng.random_range(-1.0..1.0);
        10f64.powf(u)
    });
    let sigma = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    // Symmetrize against round-off.
    let sigma = 0.5 * (&sigma + sigma.transpose());
    (mu, sigma)
}

/// Fits one random target and measures exactness of means and of the
/// corrected first-moment covariance.
pub fn certify_case(d: usize, rng: &mut ChaCha8Rng) -> Result<MvnCertifyCase> {
    let (mu, sigma) = random_target(d, rng);
    let eigs = sigma.symmetric_eigenvalues();
    let condition_number = eigs.max() / eigs.min();
    let problem = MvnProblem::new(mu.clone(), sigma.clone())?;
    let opts = FitOptions { tol: 1e-13, ..Default::default() };
    let (state, trace) = coordinate_ascent(&problem, problem.initial_state()?, &opts)?;
    let mean_error = (problem.first_moments(&state.m) - &mu).amax();

    let v = crate::engine::assemble_v(&state.factors(problem.layout()), problem.layout())?;
    let h = problem.hessian(&state.m)?;
    let r = lrvb_full(&v, &h, &LrvbOptions::default())?;
    let mut cov_err: f64 = 0.0;
    let mut cov_scale: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            cov_err = cov_err.max((r.sigma_hat[(2 * i, 2 * j)] - sigma[(i, j)]).abs());
            cov_scale = cov_scale.max(sigma[(i, j)].abs());
        }
    }
    Ok(MvnCertifyCase {
        dim: d,
        condition_number,
        mean_error,
        cov_rel_error: cov_err / cov_scale,
        sweeps: trace.sweeps,
    })
}

/// Runs `reps` random certification cases with dimensions cycling through
/// `dims`.
pub fn certify(dims: &[usize], reps: usize, seed: u64) -> Result<Vec<MvnCertifyCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..reps).map(|r| certify_case(dims[r % dims.len()], &mut rng)).collect()
}
