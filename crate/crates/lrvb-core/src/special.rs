//! Special functions shared across factor families.
//!
//! `ln_gamma` and `digamma` come from `statrs`; the remaining functions
//! (trigamma, the multivariate variants, and the digamma inverse) are
//! implemented here with standard recurrence + asymptotic-series evaluations.

use crate::error::{Error, Result};

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function `psi'(x)` for `x > 0`.
///
/// Uses the recurrence `psi'(x) = psi'(x + 1) + 1/x^2` to push the argument
/// above 10, then the asymptotic series in Bernoulli numbers through B_12
/// (first omitted term < 2e-15 at x = 10).
pub fn trigamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0, got {x}");
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum_k B_2k / x^(2k+1):
    // 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9) + 5/(66x^11) - 691/(2730x^13)
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2
                            * (1.0 / 42.0
                                + inv2
                                    * (-1.0 / 30.0
                                        + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0))))));
    acc + series
}

/// Multivariate log-gamma `ln Gamma_p(a) = p(p-1)/4 ln pi + sum_i ln Gamma(a - (i-1)/2)`.
pub fn ln_mv_gamma(p: usize, a: f64) -> f64 {
    let mut s = (p * (p - 1)) as f64 / 4.0 * std::f64::consts::PI.ln();
    for i in 0..p {
        s += ln_gamma(a - i as f64 / 2.0);
    }
    s
}

/// Multivariate digamma `psi_p(a) = sum_i psi(a - (i-1)/2)`.
pub fn mv_digamma(p: usize, a: f64) -> f64 {
    (0..p).map(|i| digamma(a - i as f64 / 2.0)).sum()
}

/// Multivariate trigamma `psi'_p(a) = sum_i psi'(a - (i-1)/2)`.
pub fn mv_trigamma(p: usize, a: f64) -> f64 {
    (0..p).map(|i| trigamma(a - i as f64 / 2.0)).sum()
}

/// Inverse digamma: solves `psi(x) = y` for `x > 0`.
///
/// Initialized with the classic two-branch approximation and polished with
/// Newton steps; `psi` is strictly increasing so convergence is monotone.
pub fn inv_digamma(y: f64) -> Result<f64> {
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + 0.5772156649015329)
    };
    for _ in 0..50 {
        let f = digamma(x) - y;
        let step = f / trigamma(x);
        let mut next = x - step;
        if next <= 0.0 {
            next = x / 2.0;
        }
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence(format!("inv_digamma({y})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trigamma_known_values() {
        let pi = std::f64::consts::PI;
        // psi'(1) = pi^2/6, psi'(2) = pi^2/6 - 1, psi'(1/2) = pi^2/2.
        assert_abs_diff_eq!(trigamma(1.0), pi * pi / 6.0, epsilon = 1e-13);
        assert_abs_diff_eq!(trigamma(2.0), pi * pi / 6.0 - 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(trigamma(0.5), pi * pi / 2.0, epsilon = 1e-12);
        // Recurrence consistency at a non-special point.
        assert_abs_diff_eq!(trigamma(3.7), trigamma(4.7) + 1.0 / (3.7f64 * 3.7), epsilon = 1e-13);
    }

    #[test]
    fn digamma_recurrence() {
        assert_abs_diff_eq!(digamma(5.3), digamma(4.3) + 1.0 / 4.3, epsilon = 1e-12);
    }

    #[test]
    fn inv_digamma_round_trip() {
        for &x in &[0.05, 0.3, 1.0, 2.5, 17.0, 431.0] {
            let y = digamma(x);
            assert_abs_diff_eq!(inv_digamma(y).unwrap(), x, epsilon = 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn mv_gamma_reduces_to_scalar() {
        assert_abs_diff_eq!(ln_mv_gamma(1, 3.2), ln_gamma(3.2), epsilon = 1e-14);
        assert_abs_diff_eq!(mv_digamma(1, 3.2), digamma(3.2), epsilon = 1e-14);
    }
}
