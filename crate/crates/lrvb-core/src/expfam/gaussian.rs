//! Univariate and multivariate Gaussian factors.
//!
//! Univariate statistics are `(x, x^2)`; multivariate statistics are
//! `(x, vech(x x^T))`. With vech storing each off-diagonal product once, the
//! natural parameters of a density `N(mu, Lambda^-1)` are `Lambda mu` on the
//! linear part and `-Lambda_aa / 2` (diagonal) / `-Lambda_ab` (off-diagonal)
//! on the quadratic part.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{vech_len, vech_pairs, vech_unpack};

const LN_2PI: f64 = 1.8378770664093453;

// ----- univariate -----

fn uv_moments(mean: &DVector<f64>) -> Result<(f64, f64)> {
    let mu = mean[0];
    let var = mean[1] - mu * mu;
    if var <= 0.0 {
        return Err(Error::Domain(format!(
            "gaussian mean parameters need E[x^2] > (E[x])^2, got variance {var:.3e}"
        )));
    }
    Ok((mu, var))
}

pub fn uv_mean_from_natural(eta: &DVector<f64>) -> Result<DVector<f64>> {
    if eta[1] >= 0.0 {
        return Err(Error::Domain(format!(
            "gaussian natural parameter eta2 must be negative, got {}",
            eta[1]
        )));
    }
    let var = -0.5 / eta[1];
    let mu = eta[0] * var;
    Ok(DVector::from_vec(vec![mu, mu * mu + var]))
}

pub fn uv_natural_from_mean(mean: &DVector<f64>) -> Result<DVector<f64>> {
    let (mu, var) = uv_moments(mean)?;
    Ok(DVector::from_vec(vec![mu / var, -0.5 / var]))
}

pub fn uv_covariance(mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (mu, var) = uv_moments(mean)?;
    let c01 = 2.0 * mu * var;
    let c11 = 2.0 * var * var + 4.0 * mu * mu * var;
    Ok(DMatrix::from_row_slice(2, 2, &[var, c01, c01, c11]))
}

pub fn uv_entropy(mean: &DVector<f64>) -> Result<f64> {
    let (_, var) = uv_moments(mean)?;
    Ok(0.5 * (LN_2PI + 1.0 + var.ln()))
}

pub fn uv_log_partition(eta: &DVector<f64>) -> Result<f64> {
    if eta[1] >= 0.0 {
        return Err(Error::Domain("gaussian eta2 must be negative".into()));
    }
    Ok(-eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * (-eta[1]).ln() + 0.5 * std::f64::consts::PI.ln())
}

// ----- multivariate -----

/// Splits the mean vector into `E[x]` and the second-moment matrix `E[x x^T]`.
fn mv_moments(p: usize, mean: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let mu = DVector::from_column_slice(&mean.as_slice()[..p]);
    let m2 = vech_unpack(p, &mean.as_slice()[p..]);
    let cov = &m2 - &mu * mu.transpose();
    if cov.clone().cholesky().is_none() {
        return Err(Error::Domain(
            "gaussian mean parameters need E[xx^T] - E[x]E[x]^T positive definite".into(),
        ));
    }
    Ok((mu, m2, cov))
}

/// Reads the precision matrix off the quadratic natural parameters.
fn mv_precision(p: usize, eta: &DVector<f64>) -> DMatrix<f64> {
    let mut lambda = DMatrix::zeros(p, p);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        let q = eta[p + idx];
        if a == b {
            lambda[(a, a)] = -2.0 * q;
        } else {
            lambda[(a, b)] = -q;
            lambda[(b, a)] = -q;
        }
    }
    lambda
}

fn precision_to_naturals(p: usize, lambda: &DMatrix<f64>, out: &mut DVector<f64>) {
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        out[p + idx] = if a == b { -0.5 * lambda[(a, a)] } else { -lambda[(a, b)] };
    }
}

pub fn mv_mean_from_natural(p: usize, eta: &DVector<f64>) -> Result<DVector<f64>> {
    let lambda = mv_precision(p, eta);
    let chol = lambda
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("gaussian natural precision not positive definite".into()))?;
    let cov = chol.inverse();
    let h = DVector::from_column_slice(&eta.as_slice()[..p]);
    let mu = &cov * h;
    let m2 = &cov + &mu * mu.transpose();
    let mut m = DVector::zeros(p + vech_len(p));
    m.rows_mut(0, p).copy_from(&mu);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        m[p + idx] = m2[(a, b)];
    }
    Ok(m)
}

pub fn mv_natural_from_mean(p: usize, mean: &DVector<f64>) -> Result<DVector<f64>> {
    let (mu, _, cov) = mv_moments(p, mean)?;
    let lambda = cov
        .clone()
        .cholesky()
        .expect("checked positive definite")
        .inverse();
    let mut eta = DVector::zeros(p + vech_len(p));
    eta.rows_mut(0, p).copy_from(&(&lambda * &mu));
    precision_to_naturals(p, &lambda, &mut eta);
    Ok(eta)
}

/// Gaussian fourth-moment (Isserlis) covariance of `(x, vech(x x^T))`.
pub fn mv_covariance(p: usize, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (mu, _, s) = mv_moments(p, mean)?;
    let t = vech_len(p);
    let mut c = DMatrix::zeros(p + t, p + t);
    c.view_mut((0, 0), (p, p)).copy_from(&s);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        for j in 0..p {
            // Cov(x_j, x_a x_b) = mu_a S_jb + mu_b S_ja
            let v = mu[a] * s[(j, b)] + mu[b] * s[(j, a)];
            c[(j, p + idx)] = v;
            c[(p + idx, j)] = v;
        }
    }
    for (i1, (a, b)) in vech_pairs(p).enumerate() {
        for (i2, (cc, d)) in vech_pairs(p).enumerate() {
            if i2 < i1 {
                continue;
            }
            let v = s[(a, cc)] * s[(b, d)]
                + s[(a, d)] * s[(b, cc)]
                + mu[a] * mu[cc] * s[(b, d)]
                + mu[a] * mu[d] * s[(b, cc)]
                + mu[b] * mu[cc] * s[(a, d)]
                + mu[b] * mu[d] * s[(a, cc)];
            c[(p + i1, p + i2)] = v;
            c[(p + i2, p + i1)] = v;
        }
    }
    Ok(c)
}

pub fn mv_entropy(p: usize, mean: &DVector<f64>) -> Result<f64> {
    let (_, _, cov) = mv_moments(p, mean)?;
    let chol = cov.cholesky().expect("checked positive definite");
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok(0.5 * (p as f64) * (LN_2PI + 1.0) + 0.5 * ln_det)
}

pub fn mv_log_partition(p: usize, eta: &DVector<f64>) -> Result<f64> {
    let lambda = mv_precision(p, eta);
    let chol = lambda
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("gaussian natural precision not positive definite".into()))?;
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let h = DVector::from_column_slice(&eta.as_slice()[..p]);
    let mu = chol.solve(&h);
    Ok(0.5 * h.dot(&mu) - 0.5 * ln_det + 0.5 * (p as f64) * LN_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn mv_round_trip_correlated() {
        // mu = (1, -2), Sigma = [[2, 0.6], [0.6, 1]]
        let mu = dvector![1.0, -2.0];
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let m2 = &sigma + &mu * mu.transpose();
        let mean = dvector![mu[0], mu[1], m2[(0, 0)], m2[(0, 1)], m2[(1, 1)]];
        let eta = mv_natural_from_mean(2, &mean).unwrap();
        let back = mv_mean_from_natural(2, &eta).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(back[i], mean[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn mv_reduces_to_uv() {
        let mean = dvector![0.7, 0.7 * 0.7 + 1.3];
        let uv = uv_covariance(&mean).unwrap();
        let mv = mv_covariance(1, &mean).unwrap();
        assert_abs_diff_eq!(uv[(0, 0)], mv[(0, 0)], epsilon = 1e-14);
        assert_abs_diff_eq!(uv[(0, 1)], mv[(0, 1)], epsilon = 1e-14);
        assert_abs_diff_eq!(uv[(1, 1)], mv[(1, 1)], epsilon = 1e-14);
        assert_abs_diff_eq!(uv_entropy(&mean).unwrap(), mv_entropy(1, &mean).unwrap(), epsilon = 1e-14);
    }
}
