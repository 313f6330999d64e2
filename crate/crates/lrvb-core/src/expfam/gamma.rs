//! Gamma factor with statistics `(x, ln x)`.
//!
//! For shape `alpha` and rate `beta` the natural parameters are
//! `(-beta, alpha - 1)`. The inverse mean map solves
//! `psi(alpha) - ln alpha = E[ln x] - ln E[x]` with a safeguarded Newton
//! iteration; the right-hand side is negative for any admissible mean by
//! Jensen's inequality and the left-hand side is strictly increasing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma, trigamma};

fn shape_rate(eta: &DVector<f64>) -> Result<(f64, f64)> {
    let beta = -eta[0];
    let alpha = eta[1] + 1.0;
    if beta <= 0.0 || alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "gamma natural parameters need rate > 0 and shape > 0, got rate {beta}, shape {alpha}"
        )));
    }
    Ok((alpha, beta))
}

pub fn mean_from_natural(eta: &DVector<f64>) -> Result<DVector<f64>> {
    let (alpha, beta) = shape_rate(eta)?;
    Ok(DVector::from_vec(vec![alpha / beta, digamma(alpha) - beta.ln()]))
}

/// Solves `psi(a) - ln a = rhs` for `a > 0` (`rhs < 0`).
pub(crate) fn solve_shape(rhs: f64) -> Result<f64> {
    if !(rhs < 0.0) {
        return Err(Error::Domain(format!(
            "gamma mean parameters need E[ln x] < ln E[x] (Jensen); got gap {rhs:.3e}"
        )));
    }
    let g = |a: f64| digamma(a) - a.ln() - rhs;
    // Asymptotics psi(a) - ln a ~ -1/(2a) give the classic starting point.
    let mut a = (-0.5 / rhs).clamp(1e-10, 1e10);
    // Bracket the root: g is strictly increasing in a.
    let (mut lo, mut hi) = (a, a);
    while g(lo) > 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoConvergence(format!("gamma shape bracketing, rhs {rhs:.3e}")));
        }
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoConvergence(format!("gamma shape bracketing, rhs {rhs:.3e}")));
        }
    }
    a = a.clamp(lo, hi);
    for _ in 0..200 {
        let f = g(a);
        if f > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let deriv = trigamma(a) - 1.0 / a;
        let mut next = a - f / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            return Ok(next);
        }
        a = next;
    }
    Err(Error::NoConvergence(format!("gamma shape solve, rhs {rhs:.3e}")))
}

pub fn natural_from_mean(mean: &DVector<f64>) -> Result<DVector<f64>> {
    if mean[0] <= 0.0 {
        return Err(Error::Domain(format!("gamma mean E[x] must be positive, got {}", mean[0])));
    }
    let rhs = mean[1] - mean[0].ln();
    let alpha = solve_shape(rhs)?;
    let beta = alpha / mean[0];
    Ok(DVector::from_vec(vec![-beta, alpha - 1.0]))
}

pub fn covariance(eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (alpha, beta) = shape_rate(eta)?;
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[alpha / (beta * beta), 1.0 / beta, 1.0 / beta, trigamma(alpha)],
    ))
}

pub fn entropy(eta: &DVector<f64>) -> Result<f64> {
    let (alpha, beta) = shape_rate(eta)?;
    Ok(alpha - beta.ln() + ln_gamma(alpha) + (1.0 - alpha) * digamma(alpha))
}

pub fn log_partition(eta: &DVector<f64>) -> Result<f64> {
    let (alpha, beta) = shape_rate(eta)?;
    Ok(ln_gamma(alpha) - alpha * beta.ln())
}
