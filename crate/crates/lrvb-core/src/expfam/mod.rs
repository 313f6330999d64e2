//! Exponential-family variational factors.
//!
//! Each factor family fixes a sufficient-statistic vector `T(x)` and exposes
//! four maps used throughout the crate:
//!
//! * `mean_from_natural` — `eta -> m = E[T]` (the forward map `grad A`),
//! * `natural_from_mean` — its inverse on the admissible mean set,
//! * `covariance_block`  — `Cov(T)`, the Hessian of the log partition,
//! * `entropy` / `log_partition` — for ELBO evaluation.
//!
//! Statistic conventions (these fix the meaning of every `V` and `H` entry):
//!
//! * `GaussianUv`: `T = (x, x^2)`.
//! * `GaussianMv(p)`: `T = (x, vech(x x^T))`, vech in row-major
//!   upper-triangle order with each off-diagonal product stored once.
//! * `Gamma`: `T = (x, ln x)`.
//! * `Dirichlet(k)`: `T = (ln pi_1, ..., ln pi_k)` (all `k` retained even
//!   though they are affinely redundant with the simplex constraint).
//! * `Wishart(p)`: `T = (vech(X), ln|X|)` for the `W(V, n)` parameterization
//!   with `E[X] = nV`.
//! * `Multinoulli(k)`: `T = (1[x=1], ..., 1[x=k])`; natural parameters are
//!   logits, identified only up to an additive shift.

mod dirichlet;
mod gaussian;
mod gamma;
mod multinoulli;
mod wishart;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::vech_len;

/// Per-factor covariance of sufficient statistics.
pub type CovBlock = DMatrix<f64>;

/// The factor families supported as mean-field components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "dim", rename_all = "snake_case")]
pub enum FactorFamily {
    GaussianUv,
    GaussianMv(usize),
    Gamma,
    Dirichlet(usize),
    Wishart(usize),
    Multinoulli(usize),
}

impl FactorFamily {
    /// Length of the sufficient-statistic (= natural-parameter) vector.
    pub fn dim(&self) -> usize {
        match *self {
            FactorFamily::GaussianUv => 2,
            FactorFamily::GaussianMv(p) => p + vech_len(p),
            FactorFamily::Gamma => 2,
            FactorFamily::Dirichlet(k) => k,
            FactorFamily::Wishart(p) => vech_len(p) + 1,
            FactorFamily::Multinoulli(k) => k,
        }
    }

    /// Human-readable names of the statistics, used for artifact rows.
    pub fn stat_names(&self) -> Vec<String> {
        use crate::linalg::vech_pairs;
        match *self {
            FactorFamily::GaussianUv => vec!["x".into(), "x^2".into()],
            FactorFamily::GaussianMv(p) => (0..p)
                .map(|a| format!("x[{a}]"))
                .chain(vech_pairs(p).map(|(a, b)| format!("x[{a}]x[{b}]")))
                .collect(),
            FactorFamily::Gamma => vec!["x".into(), "ln_x".into()],
            FactorFamily::Dirichlet(k) => (0..k).map(|i| format!("ln_p[{i}]")).collect(),
            FactorFamily::Wishart(p) => vech_pairs(p)
                .map(|(a, b)| format!("x[{a},{b}]"))
                .chain(std::iter::once("ln_det".into()))
                .collect(),
            FactorFamily::Multinoulli(k) => (0..k).map(|i| format!("i[{i}]")).collect(),
        }
    }

    pub fn check_dim(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{what} for {self:?} must have length {}, got {}",
                self.dim(),
                v.len()
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain(format!("{what} for {self:?} contains non-finite values")));
        }
        Ok(())
    }
}

/// Forward map `eta -> m = E_eta[T]`.
pub fn mean_from_natural(family: FactorFamily, eta: &DVector<f64>) -> Result<DVector<f64>> {
    family.check_dim(eta, "natural parameter")?;
    match family {
        FactorFamily::GaussianUv => gaussian::uv_mean_from_natural(eta),
        FactorFamily::GaussianMv(p) => gaussian::mv_mean_from_natural(p, eta),
        FactorFamily::Gamma => gamma::mean_from_natural(eta),
        FactorFamily::Dirichlet(_) => dirichlet::mean_from_natural(eta),
        FactorFamily::Wishart(p) => wishart::mean_from_natural(p, eta),
        FactorFamily::Multinoulli(_) => multinoulli::mean_from_natural(eta),
    }
}

/// Inverse map `m -> eta` on the interior of the admissible mean set.
pub fn natural_from_mean(family: FactorFamily, mean: &DVector<f64>) -> Result<DVector<f64>> {
    family.check_dim(mean, "mean parameter")?;
    match family {
        FactorFamily::GaussianUv => gaussian::uv_natural_from_mean(mean),
        FactorFamily::GaussianMv(p) => gaussian::mv_natural_from_mean(p, mean),
        FactorFamily::Gamma => gamma::natural_from_mean(mean),
        FactorFamily::Dirichlet(_) => dirichlet::natural_from_mean(mean),
        FactorFamily::Wishart(p) => wishart::natural_from_mean(p, mean),
        FactorFamily::Multinoulli(_) => multinoulli::natural_from_mean(mean),
    }
}

/// A factor with both parameterizations kept consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub family: FactorFamily,
    pub natural: DVector<f64>,
    pub mean: DVector<f64>,
}

impl FactorState {
    pub fn from_natural(family: FactorFamily, natural: DVector<f64>) -> Result<Self> {
        let mean = mean_from_natural(family, &natural)?;
        Ok(Self { family, natural, mean })
    }

    pub fn from_mean(family: FactorFamily, mean: DVector<f64>) -> Result<Self> {
        let natural = natural_from_mean(family, &mean)?;
        Ok(Self { family, natural, mean })
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    /// `Cov(T)` under this factor, with rows/columns in statistic order.
    pub fn covariance_block(&self) -> Result<CovBlock> {
        match self.family {
            FactorFamily::GaussianUv => gaussian::uv_covariance(&self.mean),
            FactorFamily::GaussianMv(p) => gaussian::mv_covariance(p, &self.mean),
            FactorFamily::Gamma => gamma::covariance(&self.natural),
            FactorFamily::Dirichlet(_) => dirichlet::covariance(&self.natural),
            FactorFamily::Wishart(p) => wishart::covariance(p, &self.natural),
            FactorFamily::Multinoulli(_) => multinoulli::covariance(&self.mean),
        }
    }

    /// Differential (or discrete) entropy of the factor.
    pub fn entropy(&self) -> Result<f64> {
        match self.family {
            FactorFamily::GaussianUv => gaussian::uv_entropy(&self.mean),
            FactorFamily::GaussianMv(p) => gaussian::mv_entropy(p, &self.mean),
            FactorFamily::Gamma => gamma::entropy(&self.natural),
            FactorFamily::Dirichlet(_) => dirichlet::entropy(&self.natural),
            FactorFamily::Wishart(p) => wishart::entropy(p, &self.natural),
            FactorFamily::Multinoulli(_) => multinoulli::entropy(&self.mean),
        }
    }

    /// Log partition `A(eta)` with respect to the family's base measure.
    pub fn log_partition(&self) -> Result<f64> {
        match self.family {
            FactorFamily::GaussianUv => gaussian::uv_log_partition(&self.natural),
            FactorFamily::GaussianMv(p) => gaussian::mv_log_partition(p, &self.natural),
            FactorFamily::Gamma => gamma::log_partition(&self.natural),
            FactorFamily::Dirichlet(_) => dirichlet::log_partition(&self.natural),
            FactorFamily::Wishart(p) => wishart::log_partition(p, &self.natural),
            FactorFamily::Multinoulli(_) => multinoulli::log_partition(&self.natural),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn standard_normal_round_trip() {
        // eta = (0, -1/2) is the standard normal: m = (0, 1).
        let m = mean_from_natural(FactorFamily::GaussianUv, &dvector![0.0, -0.5]).unwrap();
        assert_abs_diff_eq!(m[0], 0.0);
        assert_abs_diff_eq!(m[1], 1.0);
        let eta = natural_from_mean(FactorFamily::GaussianUv, &m).unwrap();
        assert_abs_diff_eq!(eta[0], 0.0);
        assert_abs_diff_eq!(eta[1], -0.5);
    }

    #[test]
    fn gamma_mean_map_matches_digamma() {
        // Gamma(shape 2, rate 1): E[x] = 2, E[ln x] = psi(2) = 1 - gamma.
        let eta = dvector![-1.0, 1.0];
        let m = mean_from_natural(FactorFamily::Gamma, &eta).unwrap();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 0.42278433509846713, epsilon = 1e-13);
    }

    #[test]
    fn multinoulli_equal_logits() {
        let m = mean_from_natural(FactorFamily::Multinoulli(2), &dvector![3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dirichlet_round_trip_5_5_5() {
        let eta = dvector![4.0, 4.0, 4.0]; // alpha = (5, 5, 5)
        let m = mean_from_natural(FactorFamily::Dirichlet(3), &eta).unwrap();
        let back = natural_from_mean(FactorFamily::Dirichlet(3), &m).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(back[i], eta[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn standard_normal_covariance_block() {
        let st = FactorState::from_mean(FactorFamily::GaussianUv, dvector![0.0, 1.0]).unwrap();
        let c = st.covariance_block().unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 1.0);
        assert_abs_diff_eq!(c[(0, 1)], 0.0);
        assert_abs_diff_eq!(c[(1, 1)], 2.0);
    }

    #[test]
    fn gaussian_uv_cross_covariance_identity() {
        // Cov(x, x^2) = 2 mu sigma^2 for any univariate Gaussian.
        for &(mu, var) in &[(0.7, 2.3), (-1.4, 0.2), (3.0, 1.0)] {
            let st =
                FactorState::from_mean(FactorFamily::GaussianUv, dvector![mu, mu * mu + var])
                    .unwrap();
            let c = st.covariance_block().unwrap();
            assert_abs_diff_eq!(c[(0, 1)], 2.0 * mu * var, epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_covariance_block() {
        // Gamma(shape 2, rate 1): Var x = 2, Cov(x, ln x) = 1, Var ln x = psi'(2).
        let st = FactorState::from_natural(FactorFamily::Gamma, dvector![-1.0, 1.0]).unwrap();
        let c = st.covariance_block().unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[(0, 1)], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[(1, 1)], 0.6449340668482264, epsilon = 1e-12);
    }

    #[test]
    fn multinoulli_covariance_and_entropy() {
        let st = FactorState::from_mean(FactorFamily::Multinoulli(2), dvector![0.5, 0.5]).unwrap();
        let c = st.covariance_block().unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.25);
        assert_abs_diff_eq!(c[(0, 1)], -0.25);
        assert_abs_diff_eq!(st.entropy().unwrap(), 2.0f64.ln(), epsilon = 1e-15);

        // Near-degenerate limit: entropy -> 0.
        let hard =
            FactorState::from_natural(FactorFamily::Multinoulli(2), dvector![40.0, 0.0]).unwrap();
        assert!(hard.entropy().unwrap().abs() < 1e-14);
    }

    #[test]
    fn gaussian_and_gamma_entropies() {
        let std = FactorState::from_mean(FactorFamily::GaussianUv, dvector![0.0, 1.0]).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert_abs_diff_eq!(std.entropy().unwrap(), expect, epsilon = 1e-14);

        // Gamma(1, 1) = Exp(1) has entropy 1.
        let exp1 = FactorState::from_natural(FactorFamily::Gamma, dvector![-1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(exp1.entropy().unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn inadmissible_parameters_are_rejected() {
        // Non-negative Gaussian curvature.
        assert!(mean_from_natural(FactorFamily::GaussianUv, &dvector![0.0, 0.1]).is_err());
        // Second moment below squared first moment.
        assert!(natural_from_mean(FactorFamily::GaussianUv, &dvector![2.0, 1.0]).is_err());
        // Gamma with non-positive rate or shape.
        assert!(mean_from_natural(FactorFamily::Gamma, &dvector![0.5, 1.0]).is_err());
        assert!(mean_from_natural(FactorFamily::Gamma, &dvector![-1.0, -1.5]).is_err());
        // Mean on the simplex boundary.
        assert!(natural_from_mean(FactorFamily::Multinoulli(2), &dvector![1.0, 0.0]).is_err());
    }
}
