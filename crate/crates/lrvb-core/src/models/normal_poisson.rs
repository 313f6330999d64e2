//! Poisson GLMM with a latent Gaussian layer:
//!
//! ```text
//! z_n | beta, tau ~ N(beta x_n, 1/tau),   y_n | z_n ~ Poisson(exp z_n),
//! beta ~ N(0, sigma_beta^2),              tau ~ Gamma(alpha_tau, beta_tau).
//! ```
//!
//! The beta and tau coordinate updates are conjugate; each z_n factor is a
//! univariate Gaussian whose two mean parameters are found by a damped Newton
//! solve (the factor objective is strictly concave in (E z, log Var z), so no
//! fallback is needed). The troublesome expectation `E_q[exp z]` is the
//! Gaussian MGF at 1 and stays analytic.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::engine::{HessianMatrix, ZSolverKind, ZzBlock};
use crate::error::{Error, Result};
use crate::expfam::{FactorFamily, FactorState};
use crate::layout::{BlockLayout, LayoutBuilder, Partition};
use crate::optimizer::{ModelProblem, VariationalState};

/// Observed data: one covariate and one count per unit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NpDataset {
    pub x: Vec<f64>,
    pub y: Vec<u64>,
}

impl NpDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.y.is_empty() {
            return Err(Error::Config("x and y must be equal-length and nonempty".into()));
        }
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite covariate".into()));
        }
        Ok(())
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NpPriors {
    pub beta_var: f64,
    pub tau_shape: f64,
    pub tau_rate: f64,
}

impl Default for NpPriors {
    fn default() -> Self {
        Self { beta_var: 10.0, tau_shape: 1.0, tau_rate: 1.0 }
    }
}

impl NpPriors {
    pub fn validate(&self) -> Result<()> {
        if self.beta_var > 0.0 && self.tau_shape > 0.0 && self.tau_rate > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("all prior hyperparameters must be positive".into()))
        }
    }
}

/// `E exp(z)` for Gaussian z with the given first two moments (MGF at 1).
pub fn expected_exp_z(ez: f64, ez2: f64) -> Result<f64> {
    let var = ez2 - ez * ez;
    if var < 0.0 {
        return Err(Error::Domain(format!("negative latent variance {var}")));
    }
    Ok((ez + 0.5 * var).exp())
}

/// Simulates a dataset from the generative model. Deterministic given the
/// seed; also returns the latent z draws for reference.
pub fn simulate(
    n: usize,
    beta: f64,
    tau: f64,
    seed: u64,
) -> Result<(NpDataset, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Config("need at least one observation".into()));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = tau.powf(-0.5);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let xn: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let zn = beta * xn + sd * eps;
        let rate = zn.exp();
        let yn = Poisson::new(rate)
            .map_err(|e| Error::Numerical(format!("Poisson rate {rate}: {e}")))?
            .sample(&mut rng);
        x.push(xn);
        y.push(yn as u64);
        z.push(zn);
    }
    Ok((NpDataset { x, y }, z))
}

/// The mean-field problem. Layout: `beta` (Gaussian), `tau` (gamma) in the
/// alpha partition, then one Gaussian factor per z_n.
#[derive(Debug, Clone)]
pub struct NpProblem {
    data: NpDataset,
    priors: NpPriors,
    layout: BlockLayout,
    sum_x_sq: f64,
    /// Gradient max-norm tolerance of the inner Newton solve.
    pub inner_tol: f64,
    pub inner_max_steps: usize,
}

/// Stacked index of the first z statistic.
const Z_OFFSET: usize = 4;

impl NpProblem {
    pub fn new(data: NpDataset, priors: NpPriors) -> Result<Self> {
        data.validate()?;
        priors.validate()?;
        let mut b = LayoutBuilder::new();
        b.push_named(
            "beta",
            FactorFamily::GaussianUv,
            Partition::Alpha,
            vec!["beta".into(), "beta_sq".into()],
        );
        b.push_named(
            "tau",
            FactorFamily::Gamma,
            Partition::Alpha,
            vec!["tau".into(), "log_tau".into()],
        );
        for n in 0..data.len() {
            b.push_named(
                &format!("z[{n}]"),
                FactorFamily::GaussianUv,
                Partition::Z,
                vec![format!("z[{n}]"), format!("z_sq[{n}]")],
            );
        }
        let sum_x_sq = data.x.iter().map(|v| v * v).sum();
        Ok(Self {
            data,
            priors,
            layout: b.build()?,
            sum_x_sq,
            inner_tol: 1e-10,
            inner_max_steps: 100,
        })
    }

    pub fn data(&self) -> &NpDataset {
        &self.data
    }

    pub fn priors(&self) -> &NpPriors {
        &self.priors
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    fn z_slice(m: &DVector<f64>, n: usize) -> (f64, f64) {
        (m[Z_OFFSET + 2 * n], m[Z_OFFSET + 2 * n + 1])
    }

    /// Maximizes the z_n factor objective
    /// `-tau/2 (mu^2 + v) + a mu - exp(mu + v/2) + (1/2) ln v`
    /// over (mu, w = ln v) by damped Newton. Strictly concave in these
    /// coordinates, so the iteration is globally convergent.
    fn solve_z(&self, a: f64, tau: f64, mu0: f64, v0: f64) -> Result<(f64, f64)> {
        let obj = |mu: f64, w: f64| -> f64 {
            let v = w.exp();
            -0.5 * tau * (mu * mu + v) + a * mu - (mu + 0.5 * v).exp() + 0.5 * w
        };
        let mut mu = mu0;
        let mut w = v0.max(1e-12).ln();
        let mut f = obj(mu, w);
        let tol = self.inner_tol * (1.0 + a.abs());
        for _ in 0..self.inner_max_steps {
            let v = w.exp();
            let g = (mu + 0.5 * v).exp();
            let grad_mu = -tau * mu + a - g;
            let grad_w = -0.5 * v * (tau + g) + 0.5;
            if grad_mu.abs().max(grad_w.abs()) <= tol {
                return Ok((mu, v));
            }
            let h_mm = -(tau + g);
            let h_mw = -0.5 * g * v;
            let h_ww = -0.5 * v * (tau + g) - 0.25 * v * v * g;
            let det = h_mm * h_ww - h_mw * h_mw;
            if !(det > 0.0) || !det.is_finite() {
                return Err(Error::Numerical(format!(
                    "latent Newton curvature degenerate (det={det})"
                )));
            }
            // Newton step: -H^-1 grad.
            let d_mu = -(h_ww * grad_mu - h_mw * grad_w) / det;
            let d_w = -(-h_mw * grad_mu + h_mm * grad_w) / det;
            // Inside the quadratic basin the objective changes by less than
            // one ulp of f, so a comparison-based line search stalls; strict
            // concavity makes the undamped step safe there.
            if d_mu.abs().max(d_w.abs()) <= 1e-5 {
                mu += d_mu;
                w += d_w;
                f = obj(mu, w);
                continue;
            }
            let slack = 1e-12 * (1.0 + f.abs());
            let mut t = 1.0;
            let mut stepped = false;
            for _ in 0..60 {
                let cand = obj(mu + t * d_mu, w + t * d_w);
                if cand.is_finite() && cand >= f - slack {
                    mu += t * d_mu;
                    w += t * d_w;
                    f = cand;
                    stepped = true;
                    break;
                }
                t *= 0.5;
            }
            if !stepped {
                // Objective is flat to round-off along the Newton direction;
                // accept the current point if the gradient is nearly there.
                if grad_mu.abs().max(grad_w.abs()) <= 1e3 * tol {
                    return Ok((mu, w.exp()));
                }
                return Err(Error::NoConvergence(
                    "latent Newton line search stalled".into(),
                ));
            }
        }
        Err(Error::NoConvergence(format!(
            "latent Newton exceeded {} steps (a={a:.6e}, tau={tau:.6e}, mu0={mu0:.6e}, v0={v0:.6e}, mu={mu:.6e}, w={w:.6e})",
            self.inner_max_steps
        )))
    }
}

impl ModelProblem for NpProblem {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn initial_state(&self) -> Result<VariationalState> {
        let mut factors = Vec::with_capacity(2 + self.n());
        factors.push(FactorState::from_mean(
            FactorFamily::GaussianUv,
            DVector::from_vec(vec![0.0, 1.0]),
        )?);
        // Gamma(2, 2): mean 1, mild spread.
        factors.push(FactorState::from_natural(
            FactorFamily::Gamma,
            DVector::from_vec(vec![-2.0, 1.0]),
        )?);
        for n in 0..self.n() {
            let mu = (self.data.y[n] as f64 + 0.5).ln();
            factors.push(FactorState::from_mean(
                FactorFamily::GaussianUv,
                DVector::from_vec(vec![mu, mu * mu + 0.5]),
            )?);
        }
        VariationalState::from_factors(&self.layout, &factors)
    }

    fn update_factor(&self, state: &mut VariationalState, j: usize) -> Result<()> {
        let m = &state.m;
        match j {
            0 => {
                // beta: precision = E tau sum x^2 + 1/sigma_beta^2,
                //       linear coefficient = E tau sum x_n E z_n.
                let tau = m[2];
                let lin: f64 = self
                    .data
                    .x
                    .iter()
                    .enumerate()
                    .map(|(n, &x)| x * Self::z_slice(m, n).0)
                    .sum();
                let eta1 = tau * lin;
                let eta2 = -0.5 * (tau * self.sum_x_sq + 1.0 / self.priors.beta_var);
                let f = FactorState::from_natural(
                    FactorFamily::GaussianUv,
                    DVector::from_vec(vec![eta1, eta2]),
                )?;
                state.set_factor(&self.layout, j, &f)
            }
            1 => {
                // tau: shape = alpha_tau + N/2,
                //      rate = beta_tau + 1/2 sum E(z_n - beta x_n)^2.
                let beta = m[0];
                let beta_sq = m[1];
                let mut quad = 0.0;
                for (n, &x) in self.data.x.iter().enumerate() {
                    let (ez, ez2) = Self::z_slice(m, n);
                    quad += ez2 - 2.0 * x * beta * ez + x * x * beta_sq;
                }
                let shape = self.priors.tau_shape + self.n() as f64 / 2.0;
                let rate = self.priors.tau_rate + 0.5 * quad;
                if rate <= 0.0 {
                    return Err(Error::Domain(format!("nonpositive tau rate {rate}")));
                }
                let f = FactorState::from_natural(
                    FactorFamily::Gamma,
                    DVector::from_vec(vec![-rate, shape - 1.0]),
                )?;
                state.set_factor(&self.layout, j, &f)
            }
            _ => {
                let n = j - 2;
                let tau = m[2];
                let a = tau * self.data.x[n] * m[0] + self.data.y[n] as f64;
                let (mu0, ez2) = Self::z_slice(m, n);
                let v0 = ez2 - mu0 * mu0;
                let (mu, v) = self.solve_z(a, tau, mu0, v0)?;
                let f = FactorState::from_mean(
                    FactorFamily::GaussianUv,
                    DVector::from_vec(vec![mu, mu * mu + v]),
                )?;
                state.set_factor(&self.layout, j, &f)
            }
        }
    }

    fn expected_log_posterior(&self, m: &DVector<f64>) -> Result<f64> {
        let beta = m[0];
        let beta_sq = m[1];
        let tau = m[2];
        let log_tau = m[3];
        let p = &self.priors;
        let nf = self.n() as f64;
        let ln_2pi = 1.837_877_066_409_345_3;
        let mut total = 0.0;
        for (n, &x) in self.data.x.iter().enumerate() {
            let (ez, ez2) = Self::z_slice(m, n);
            let y = self.data.y[n] as f64;
            total += -0.5 * tau * (ez2 - 2.0 * x * beta * ez + x * x * beta_sq)
                + 0.5 * log_tau
                + y * ez
                - expected_exp_z(ez, ez2)?
                - crate::special::ln_gamma(y + 1.0);
        }
        total += -0.5 * nf * ln_2pi;
        total += -0.5 * beta_sq / p.beta_var - 0.5 * (2.0 * std::f64::consts::PI * p.beta_var).ln();
        total += p.tau_shape * p.tau_rate.ln() - crate::special::ln_gamma(p.tau_shape)
            + (p.tau_shape - 1.0) * log_tau
            - p.tau_rate * tau;
        Ok(total)
    }

    fn hessian(&self, m: &DVector<f64>) -> Result<HessianMatrix> {
        let n = self.n();
        let beta = m[0];
        let tau = m[2];
        // Alpha stats: beta, beta_sq, tau, log_tau.
        let mut aa = DMatrix::zeros(4, 4);
        let mut az = DMatrix::zeros(4, 2 * n);
        let mut zz = Vec::with_capacity(n);
        let mut sum_x_ez = 0.0;
        for (i, &x) in self.data.x.iter().enumerate() {
            let (ez, ez2) = Self::z_slice(m, i);
            sum_x_ez += x * ez;
            // Cross terms from -tau/2 (z^2 - 2 x beta z + x^2 beta^2).
            az[(0, 2 * i)] = tau * x;
            az[(2, 2 * i)] = x * beta;
            az[(2, 2 * i + 1)] = -0.5;
            let g = expected_exp_z(ez, ez2)?;
            let one_minus = 1.0 - ez;
            zz.push(DMatrix::from_row_slice(
                2,
                2,
                &[
                    g * (1.0 - one_minus * one_minus),
                    -0.5 * g * one_minus,
                    -0.5 * g * one_minus,
                    -0.25 * g,
                ],
            ));
        }
        aa[(0, 2)] = sum_x_ez;
        aa[(2, 0)] = sum_x_ez;
        aa[(1, 2)] = -0.5 * self.sum_x_sq;
        aa[(2, 1)] = -0.5 * self.sum_x_sq;
        HessianMatrix::new(aa, az, ZzBlock::FactorBlocks(zz))
    }

    fn z_solver(&self) -> ZSolverKind {
        ZSolverKind::FactorBlocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{check_fixed_point, coordinate_ascent, FitOptions};
    use approx::assert_abs_diff_eq;

    #[test]
    fn expected_exp_z_examples() {
        assert_abs_diff_eq!(expected_exp_z(0.0, 1.0).unwrap(), 0.5f64.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(expected_exp_z(1.0, 1.0).unwrap(), std::f64::consts::E, epsilon = 1e-14);
        assert_abs_diff_eq!(expected_exp_z(0.3, 0.5).unwrap(), 0.505f64.exp(), epsilon = 1e-14);
        assert!(expected_exp_z(1.0, 0.5).is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_degenerate_limit_holds() {
        let (d1, _) = simulate(200, 0.4, 3.0, 9).unwrap();
        let (d2, _) = simulate(200, 0.4, 3.0, 9).unwrap();
        assert_eq!(d1.x, d2.x);
        assert_eq!(d1.y, d2.y);
        // tau -> infinity, beta = 0: z == 0 so y ~ Poisson(1).
        let (d, z) = simulate(4000, 0.0, 1e8, 10).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-3));
        let mean_y = d.y.iter().sum::<u64>() as f64 / d.len() as f64;
        assert_abs_diff_eq!(mean_y, 1.0, epsilon = 0.06);
    }

    fn small_problem(seed: u64) -> NpProblem {
        let (data, _) = simulate(40, 0.6, 4.0, seed).unwrap();
        NpProblem::new(data, NpPriors::default()).unwrap()
    }

    #[test]
    fn fit_converges_and_elbo_is_monotone() {
        let p = small_problem(21);
        let (state, trace) =
            coordinate_ascent(&p, p.initial_state().unwrap(), &FitOptions::default()).unwrap();
        assert!(trace.converged);
        for w in trace.elbo.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "ELBO decreased: {} -> {}", w[0], w[1]);
        }
        assert!(check_fixed_point(&p, &state).unwrap() < 1e-8);
    }

    #[test]
    fn beta_mean_is_zero_when_all_latents_are_zero() {
        let p = small_problem(22);
        let mut state = p.initial_state().unwrap();
        for n in 0..p.n() {
            let f = FactorState::from_mean(
                FactorFamily::GaussianUv,
                DVector::from_vec(vec![0.0, 1.0]),
            )
            .unwrap();
            state.set_factor(p.layout(), 2 + n, &f).unwrap();
        }
        p.update_factor(&mut state, 0).unwrap();
        assert_abs_diff_eq!(state.m[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_observation_updates_match_hand_algebra() {
        let data = NpDataset { x: vec![2.0], y: vec![3] };
        let priors = NpPriors { beta_var: 5.0, tau_shape: 1.5, tau_rate: 0.7 };
        let p = NpProblem::new(data, priors).unwrap();
        let mut state = p.initial_state().unwrap();
        // Install known moments for tau and z.
        let tau_f = FactorState::from_natural(
            FactorFamily::Gamma,
            DVector::from_vec(vec![-2.0, 2.0]), // Gamma(3, 2): E tau = 1.5
        )
        .unwrap();
        state.set_factor(p.layout(), 1, &tau_f).unwrap();
        let z_f = FactorState::from_mean(
            FactorFamily::GaussianUv,
            DVector::from_vec(vec![0.8, 0.8f64 * 0.8 + 0.3]),
        )
        .unwrap();
        state.set_factor(p.layout(), 2, &z_f).unwrap();

        p.update_factor(&mut state, 0).unwrap();
        // precision = E tau x^2 + 1/sigma^2 = 1.5 * 4 + 0.2 = 6.2,
        // mean = E tau x E z / precision = 1.5 * 2 * 0.8 / 6.2.
        let prec = 6.2;
        let mean = 1.5 * 2.0 * 0.8 / prec;
        assert_abs_diff_eq!(state.m[0], mean, epsilon = 1e-12);
        assert_abs_diff_eq!(state.m[1], mean * mean + 1.0 / prec, epsilon = 1e-12);

        p.update_factor(&mut state, 1).unwrap();
        // shape = 1.5 + 0.5 = 2; rate = 0.7 + (E z^2 - 2 x E beta E z + x^2 E beta^2)/2.
        let ez2 = 0.8f64 * 0.8 + 0.3;
        let quad = ez2 - 2.0 * 2.0 * mean * 0.8 + 4.0 * (mean * mean + 1.0 / prec);
        let rate = 0.7 + 0.5 * quad;
        assert_abs_diff_eq!(state.m[2], 2.0 / rate, epsilon = 1e-12);
        assert_abs_diff_eq!(
            state.m[3],
            crate::special::digamma(2.0) - rate.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn latent_update_matches_grid_search() {
        let p = small_problem(23);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let a: f64 = rng.random_range(-2.0..6.0);
            let tau: f64 = rng.random_range(0.5..8.0);
            let (mu, v) = p.solve_z(a, tau, 0.0, 1.0).unwrap();
            // Stationarity: mu = (a - g)/tau, v = 1/(tau + g).
            let g = (mu + 0.5 * v).exp();
            assert_abs_diff_eq!(mu, (a - g) / tau, epsilon = 1e-8);
            assert_abs_diff_eq!(v, 1.0 / (tau + g), epsilon = 1e-8);
            // Grid search cannot beat the Newton optimum.
            let obj = |mu: f64, v: f64| {
                -0.5 * tau * (mu * mu + v) + a * mu - (mu + 0.5 * v).exp() + 0.5 * v.ln()
            };
            let best = obj(mu, v);
            for i in 0..60 {
                for j in 0..60 {
                    let mc = mu - 0.6 + 0.02 * i as f64;
                    let vc = v * (0.5 + 0.02 * j as f64);
                    assert!(obj(mc, vc) <= best + 1e-9);
                }
            }
        }
    }

    #[test]
    fn latent_update_limits() {
        let p = small_problem(24);
        // Huge count: E z ~ ln y.
        let y = 5e5;
        let (mu, _) = p.solve_z(y, 1.0, 10.0, 0.1).unwrap();
        assert_abs_diff_eq!(mu, y.ln(), epsilon = 0.01);
        // Huge tau with negligible exp term: E z -> a / tau (= beta x).
        let (mu, v) = p.solve_z(0.3 * 1e8, 1e8, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(mu, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 1e-8, epsilon = 2e-10);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let p = small_problem(25);
        let (state, _) =
            coordinate_ascent(&p, p.initial_state().unwrap(), &FitOptions::default()).unwrap();
        let h = p.hessian(&state.m).unwrap();
        assert_eq!(h.alpha_dim(), 4);
        assert_eq!(h.z_dim(), 2 * p.n());
        let f = |m: &DVector<f64>| p.expected_log_posterior(m);
        let fd = crate::oracle::fd::fd_hessian(&f, &state.m, 1e-4).unwrap();
        let err = (h.to_dense() - fd).amax();
        assert!(err < 1e-4, "analytic vs FD Hessian error {err}");
    }
}
