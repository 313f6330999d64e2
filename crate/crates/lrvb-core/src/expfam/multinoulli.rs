//! Multinoulli (categorical indicator) factor.
//!
//! Statistics are the `K` indicators, so the mean parameter is the
//! probability vector itself. The natural parameters are logits, identified
//! only up to an additive shift; `natural_from_mean` returns the `ln p`
//! representative. `Cov(T) = diag(p) - p p^T` is singular by the simplex
//! constraint, which the linear-response solves tolerate because they never
//! invert `V` itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean_from_natural(eta: &DVector<f64>) -> Result<DVector<f64>> {
    let max = eta.max();
    let mut p = eta.map(|e| (e - max).exp());
    let sum = p.sum();
    p /= sum;
    Ok(p)
}

pub fn natural_from_mean(mean: &DVector<f64>) -> Result<DVector<f64>> {
    if mean.iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain("multinoulli mean must lie in the open simplex".into()));
    }
    let sum = mean.sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!(
            "multinoulli mean must sum to 1, got {sum}"
        )));
    }
    Ok(mean.map(|p| p.ln()))
}

pub fn covariance(mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = mean.len();
    let mut c = -mean * mean.transpose();
    for i in 0..k {
        c[(i, i)] += mean[i];
    }
    Ok(c)
}

pub fn entropy(mean: &DVector<f64>) -> Result<f64> {
    Ok(-mean.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>())
}

pub fn log_partition(eta: &DVector<f64>) -> Result<f64> {
    let max = eta.max();
    Ok(max + eta.iter().map(|&e| (e - max).exp()).sum::<f64>().ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn softmax_is_shift_invariant() {
        let p1 = mean_from_natural(&dvector![1.0, 2.0, -0.5]).unwrap();
        let p2 = mean_from_natural(&dvector![101.0, 102.0, 99.5]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(p1[i], p2[i], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(p1.sum(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn covariance_rows_sum_to_zero() {
        let p = mean_from_natural(&dvector![0.3, -1.0, 2.0, 0.0]).unwrap();
        let c = covariance(&p).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(c.row(i).sum(), 0.0, epsilon = 1e-15);
        }
    }
}
