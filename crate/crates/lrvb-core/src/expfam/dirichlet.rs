//! Dirichlet factor with statistics `(ln pi_1, ..., ln pi_K)`.
//!
//! Natural parameters are `alpha_k - 1`. All `K` log statistics are kept even
//! though they sum-constrain each other through the simplex; the covariance
//! block `psi'(alpha_i) delta_ij - psi'(alpha_0)` is exactly the Hessian of
//! the log partition in this parameterization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::{digamma, inv_digamma, ln_gamma, trigamma};

fn alphas(eta: &DVector<f64>) -> Result<DVector<f64>> {
    let alpha = eta.add_scalar(1.0);
    if alpha.iter().any(|&a| a <= 0.0) {
        return Err(Error::Domain("dirichlet needs all alpha_k > 0".into()));
    }
    Ok(alpha)
}

pub fn mean_from_natural(eta: &DVector<f64>) -> Result<DVector<f64>> {
    let alpha = alphas(eta)?;
    let psi0 = digamma(alpha.sum());
    Ok(alpha.map(|a| digamma(a) - psi0))
}

pub fn natural_from_mean(mean: &DVector<f64>) -> Result<DVector<f64>> {
    let k = mean.len();
    if k == 1 {
        // pi = 1 identically; ln pi = 0 and alpha is unidentified.
        if mean[0].abs() > 1e-9 {
            return Err(Error::Domain("dirichlet with K=1 must have E[ln pi] = 0".into()));
        }
        return Ok(DVector::from_vec(vec![0.0]));
    }
    if mean.iter().any(|&m| m >= 0.0) {
        return Err(Error::Domain("dirichlet mean needs E[ln pi_k] < 0".into()));
    }
    // Fixed point: alpha_k = psi^-1(m_k + psi(alpha_0)).
    let mut alpha = DVector::from_element(k, 1.0);
    for _ in 0..500 {
        let psi0 = digamma(alpha.sum());
        let mut next = DVector::zeros(k);
        for i in 0..k {
            next[i] = inv_digamma(mean[i] + psi0)?;
        }
        let delta = (&next - &alpha).amax();
        let scale = 1.0 + alpha.amax();
        alpha = next;
        if delta <= 1e-12 * scale {
            return Ok(alpha.add_scalar(-1.0));
        }
    }
    Err(Error::NoConvergence("dirichlet natural_from_mean fixed point".into()))
}

pub fn covariance(eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let alpha = alphas(eta)?;
    let k = alpha.len();
    let t0 = trigamma(alpha.sum());
    let mut c = DMatrix::from_element(k, k, -t0);
    for i in 0..k {
        c[(i, i)] += trigamma(alpha[i]);
    }
    Ok(c)
}

pub fn entropy(eta: &DVector<f64>) -> Result<f64> {
    let alpha = alphas(eta)?;
    let k = alpha.len() as f64;
    let a0 = alpha.sum();
    let ln_b = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0);
    let s: f64 = alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum();
    Ok(ln_b + (a0 - k) * digamma(a0) - s)
}

pub fn log_partition(eta: &DVector<f64>) -> Result<f64> {
    let alpha = alphas(eta)?;
    Ok(alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.sum()))
}
