//! Coordinate-ascent driver for mean-field fits.
//!
//! A model implements [`ModelProblem`]; the driver sweeps its factors,
//! applying each closed-form (or inner-Newton) update in turn, and stops when
//! the largest scaled change of any moment over a full sweep drops below
//! tolerance. The evidence lower bound is tracked per sweep so tests can
//! assert monotonicity.

use nalgebra::DVector;

use crate::engine::{HessianMatrix, ZSolverKind};
use crate::error::{Error, Result};
use crate::expfam::FactorState;
use crate::layout::BlockLayout;

/// Joint state of all variational factors, stored both as stacked moment
/// coordinates `m` and per-factor natural parameters.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// Stacked expected sufficient statistics, in layout order.
    pub m: DVector<f64>,
    /// Natural parameters per factor, in layout order.
    pub naturals: Vec<DVector<f64>>,
}

impl VariationalState {
    pub fn from_factors(layout: &BlockLayout, factors: &[FactorState]) -> Result<Self> {
        if factors.len() != layout.num_factors() {
            return Err(Error::LayoutMismatch(format!(
                "{} factor states for a layout with {} factors",
                factors.len(),
                layout.num_factors()
            )));
        }
        let mut m = DVector::zeros(layout.total_dim());
        let mut naturals = Vec::with_capacity(factors.len());
        for (f, b) in factors.iter().zip(layout.blocks()) {
            if f.family != b.family {
                return Err(Error::LayoutMismatch(format!(
                    "factor '{}' family mismatch",
                    b.name
                )));
            }
            m.rows_mut(b.range.start, b.range.len()).copy_from(&f.mean);
            naturals.push(f.natural.clone());
        }
        Ok(Self { m, naturals })
    }

    /// Moment slice of factor `j`.
    pub fn mean_of(&self, layout: &BlockLayout, j: usize) -> DVector<f64> {
        let b = layout.block(j);
        self.m.rows(b.range.start, b.range.len()).into_owned()
    }

    /// Reconstructs the [`FactorState`] of factor `j` without any root finds.
    pub fn factor(&self, layout: &BlockLayout, j: usize) -> FactorState {
        let b = layout.block(j);
        FactorState {
            family: b.family.clone(),
            natural: self.naturals[j].clone(),
            mean: self.mean_of(layout, j),
        }
    }

    /// All factor states, in layout order.
    pub fn factors(&self, layout: &BlockLayout) -> Vec<FactorState> {
        (0..layout.num_factors()).map(|j| self.factor(layout, j)).collect()
    }

    /// Installs a freshly updated factor, keeping `m` and `naturals` in sync.
    pub fn set_factor(&mut self, layout: &BlockLayout, j: usize, f: &FactorState) -> Result<()> {
        let b = layout.block(j);
        if f.family != b.family {
            return Err(Error::LayoutMismatch(format!("factor '{}' family mismatch", b.name)));
        }
        b.family.check_dim(&f.mean, "mean parameter")?;
        self.m.rows_mut(b.range.start, b.range.len()).copy_from(&f.mean);
        self.naturals[j] = f.natural.clone();
        Ok(())
    }
}

/// Order in which factors are visited within a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateOrder {
    /// The model's default order (global factors first, then z factors).
    Default,
    /// The default order reversed.
    Reversed,
    /// An explicit permutation of factor indices.
    Custom(Vec<usize>),
}

/// Options for [`coordinate_ascent`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on the per-sweep max scaled moment change.
    pub tol: f64,
    pub max_sweeps: usize,
    pub order: UpdateOrder,
    /// Record the evidence lower bound after every sweep (costs one
    /// objective evaluation per sweep).
    pub track_elbo: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_sweeps: 10_000, order: UpdateOrder::Default, track_elbo: true }
    }
}

/// Convergence record of a coordinate-ascent run.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Evidence lower bound after each sweep (empty if not tracked).
    pub elbo: Vec<f64>,
    /// Max scaled moment change per sweep.
    pub max_change: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl FitTrace {
    pub fn final_elbo(&self) -> Option<f64> {
        self.elbo.last().copied()
    }
}

/// A mean-field model: factor layout, coordinate updates, objective, and the
/// curvature needed for the linear-response correction.
pub trait ModelProblem {
    fn layout(&self) -> &BlockLayout;

    /// Starting factor states.
    fn initial_state(&self) -> Result<VariationalState>;

    /// Applies the optimal update of factor `j` given all other factors.
    fn update_factor(&self, state: &mut VariationalState, j: usize) -> Result<()>;

    /// Expected log joint density `E_q[log p(x, theta)]` as a function of the
    /// stacked moments `m`.
    fn expected_log_posterior(&self, m: &DVector<f64>) -> Result<f64>;

    /// Analytic Hessian of [`Self::expected_log_posterior`] at `m`.
    fn hessian(&self, m: &DVector<f64>) -> Result<HessianMatrix>;

    /// Structure of the z-z Hessian block, for the Schur solver.
    fn z_solver(&self) -> ZSolverKind {
        ZSolverKind::Dense
    }

    /// Default visit order: global factors first, then z factors, each in
    /// layout order.
    fn default_order(&self) -> Vec<usize> {
        let layout = self.layout();
        let (alpha, z): (Vec<usize>, Vec<usize>) =
            (0..layout.num_factors()).partition(|&j| layout.block(j).is_alpha());
        alpha.into_iter().chain(z).collect()
    }
}

fn resolve_order(problem: &dyn ModelProblem, order: &UpdateOrder) -> Result<Vec<usize>> {
    let n = problem.layout().num_factors();
    let order = match order {
        UpdateOrder::Default => problem.default_order(),
        UpdateOrder::Reversed => {
            let mut o = problem.default_order();
            o.reverse();
            o
        }
        UpdateOrder::Custom(o) => o.clone(),
    };
    let mut seen = vec![false; n];
    for &j in &order {
        if j >= n || seen[j] {
            return Err(Error::Config(format!("invalid update order: index {j}")));
        }
        seen[j] = true;
    }
    if order.len() != n {
        return Err(Error::Config("update order must visit every factor once".into()));
    }
    Ok(order)
}

/// Evidence lower bound at `state`: expected log joint plus factor entropies.
pub fn elbo(problem: &dyn ModelProblem, state: &VariationalState) -> Result<f64> {
    let layout = problem.layout();
    let mut total = problem.expected_log_posterior(&state.m)?;
    for j in 0..layout.num_factors() {
        total += state.factor(layout, j).entropy()?;
    }
    Ok(total)
}

/// Runs block coordinate ascent from `init` until the largest scaled moment
/// change over a sweep falls below `opts.tol`.
pub fn coordinate_ascent(
    problem: &dyn ModelProblem,
    init: VariationalState,
    opts: &FitOptions,
) -> Result<(VariationalState, FitTrace)> {
    let (state, trace) = coordinate_ascent_partial(problem, init, opts)?;
    if !trace.converged {
        let last = trace.max_change.last().copied().unwrap_or(f64::NAN);
        return Err(Error::MaxSweepsExceeded(opts.max_sweeps, last));
    }
    Ok((state, trace))
}

/// Like [`coordinate_ascent`], but exhausting the sweep budget returns the
/// last state with `converged = false` instead of an error, so callers can
/// still inspect or report the partial fit. Numeric failures still abort.
pub fn coordinate_ascent_partial(
    problem: &dyn ModelProblem,
    init: VariationalState,
    opts: &FitOptions,
) -> Result<(VariationalState, FitTrace)> {
    let layout = problem.layout();
    let order = resolve_order(problem, &opts.order)?;
    let mut state = init;
    let mut trace = FitTrace { elbo: Vec::new(), max_change: Vec::new(), sweeps: 0, converged: false };

    for sweep in 1..=opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for &j in &order {
            let b = layout.block(j);
            let before = state.m.rows(b.range.start, b.range.len()).into_owned();
            problem.update_factor(&mut state, j)?;
            let after = state.m.rows(b.range.start, b.range.len());
            for i in 0..before.len() {
                let change = (after[i] - before[i]).abs() / (1.0 + before[i].abs());
                if change > max_change {
                    max_change = change;
                }
            }
        }
        trace.sweeps = sweep;
        trace.max_change.push(max_change);
        if opts.track_elbo {
            trace.elbo.push(elbo(problem, &state)?);
        }
        if !max_change.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite moment change in sweep {sweep}"
            )));
        }
        if max_change <= opts.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}

/// One extra sweep on a copy of `state`; returns the max scaled moment change.
/// At a true fixed point this is ~0 regardless of visit order.
pub fn check_fixed_point(problem: &dyn ModelProblem, state: &VariationalState) -> Result<f64> {
    let layout = problem.layout();
    let mut probe = state.clone();
    let mut max_change: f64 = 0.0;
    for j in resolve_order(problem, &UpdateOrder::Default)? {
        let b = layout.block(j);
        let before = probe.m.rows(b.range.start, b.range.len()).into_owned();
        problem.update_factor(&mut probe, j)?;
        let after = probe.m.rows(b.range.start, b.range.len());
        for i in 0..before.len() {
            let change = (after[i] - before[i]).abs() / (1.0 + before[i].abs());
            max_change = max_change.max(change);
        }
    }
    Ok(max_change)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::FactorFamily;
    use crate::layout::{LayoutBuilder, Partition};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    /// Toy conjugate problem: x | mu ~ N(mu, 1) with one observation x = 2
    /// and prior mu ~ N(0, 1). Posterior is N(1, 1/2); the single-factor
    /// "mean-field" fit is exact, so one sweep converges and the ELBO equals
    /// the log evidence N(x; 0, 2).
    struct ConjugateNormal {
        layout: BlockLayout,
        x: f64,
    }

    impl ConjugateNormal {
        fn new(x: f64) -> Self {
            let mut b = LayoutBuilder::new();
            b.push("mu", FactorFamily::GaussianUv, Partition::Alpha);
            Self { layout: b.build().unwrap(), x }
        }
    }

    impl ModelProblem for ConjugateNormal {
        fn layout(&self) -> &BlockLayout {
            &self.layout
        }

        fn initial_state(&self) -> Result<VariationalState> {
            let f = FactorState::from_mean(
                FactorFamily::GaussianUv,
                DVector::from_vec(vec![0.0, 4.0]),
            )?;
            VariationalState::from_factors(&self.layout, &[f])
        }

        fn update_factor(&self, state: &mut VariationalState, j: usize) -> Result<()> {
            let prec = 2.0;
            let mean = self.x / prec;
            let f = FactorState::from_natural(
                FactorFamily::GaussianUv,
                DVector::from_vec(vec![mean * prec, -0.5 * prec]),
            )?;
            state.set_factor(&self.layout, j, &f)
        }

        fn expected_log_posterior(&self, m: &DVector<f64>) -> Result<f64> {
            // E[log N(x; mu, 1)] + E[log N(mu; 0, 1)] with E mu = m1, E mu^2 = m2.
            let ln_2pi = 1.837_877_066_409_345_3;
            let lik = -0.5 * ln_2pi - 0.5 * (self.x * self.x - 2.0 * self.x * m[0] + m[1]);
            let prior = -0.5 * ln_2pi - 0.5 * m[1];
            Ok(lik + prior)
        }

        fn hessian(&self, _m: &DVector<f64>) -> Result<HessianMatrix> {
            HessianMatrix::alpha_only(DMatrix::zeros(2, 2))
        }
    }

    #[test]
    fn conjugate_normal_elbo_equals_log_evidence() {
        let p = ConjugateNormal::new(2.0);
        let (state, trace) =
            coordinate_ascent(&p, p.initial_state().unwrap(), &FitOptions::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.sweeps <= 2);
        assert_abs_diff_eq!(state.m[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.m[1], 1.0 + 0.5, epsilon = 1e-12);
        // log N(2; 0, 2)
        let evidence = -0.5 * (2.0f64 * std::f64::consts::PI * 2.0).ln() - 0.5 * 4.0 / 2.0;
        assert_abs_diff_eq!(trace.final_elbo().unwrap(), evidence, epsilon = 1e-12);
        assert!(check_fixed_point(&p, &state).unwrap() < 1e-14);
    }

    #[test]
    fn bad_custom_order_is_rejected() {
        let p = ConjugateNormal::new(1.0);
        let opts = FitOptions { order: UpdateOrder::Custom(vec![0, 0]), ..Default::default() };
        match coordinate_ascent(&p, p.initial_state().unwrap(), &opts) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config error, got {other:?}"),
        }
    }
}
