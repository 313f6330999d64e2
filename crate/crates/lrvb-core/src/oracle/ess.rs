//! Effective sample size via the initial-positive-sequence estimator.
//!
//! For a stationary chain, `ESS = n / (1 + 2 sum_t rho_t)`. The sum of
//! autocorrelations is truncated where the summed adjacent pair
//! `rho_{2k} + rho_{2k+1}` first turns nonpositive, which is a consistent and
//! conservative truncation for reversible chains.

use crate::error::{Error, Result};

const MIN_DRAWS: usize = 100;

/// Effective sample size of one scalar trajectory.
///
/// Returns 0 for a constant chain; errors on fewer than 100 draws.
pub fn ess(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < MIN_DRAWS {
        return Err(Error::TooFewDraws(n, MIN_DRAWS));
    }
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let var0 = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if var0 == 0.0 || !var0.is_finite() {
        return Ok(0.0);
    }

    // Biased (1/n) autocovariances, per the standard spectral estimator.
    let gamma = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += (draws[t] - mean) * (draws[t + lag] - mean);
        }
        acc / nf
    };

    let mut sum_pairs = 0.0;
    let mut k = 0usize;
    loop {
        let lag0 = 2 * k;
        let lag1 = 2 * k + 1;
        if lag1 >= n {
            break;
        }
        let pair = (gamma(lag0) + gamma(lag1)) / var0;
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        k += 1;
    }
    // tau = -1 + 2 * sum of positive pairs (the k=0 pair includes rho_0 = 1).
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0);
    Ok(nf / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iid_chain_has_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let draws: Vec<f64> =
            (0..n).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        let e = ess(&draws).unwrap();
        assert!(
            e > 0.9 * n as f64 && e < 1.1 * n as f64,
            "iid ESS {e} outside [0.9, 1.1] * {n}"
        );
    }

    #[test]
    fn ar1_chain_matches_analytic_factor() {
        // AR(1) with phi = 0.5 has integrated autocorrelation time
        // (1 + phi) / (1 - phi) = 3, so ESS ~ n / 3.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi: f64 = 0.5;
        let n = 200_000;
        let innovation_sd = (1.0 - phi * phi).sqrt();
        let mut x = 0.0;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let eps: f64 = rand_distr::StandardNormal.sample(&mut rng);
            x = phi * x + innovation_sd * eps;
            draws.push(x);
        }
        let e = ess(&draws).unwrap();
        let expect = n as f64 / 3.0;
        assert!(
            (e - expect).abs() / expect < 0.1,
            "AR(1) ESS {e} not within 10% of {expect}"
        );
    }

    #[test]
    fn constant_chain_has_zero_ess() {
        assert_eq!(ess(&vec![2.5; 500]).unwrap(), 0.0);
    }

    #[test]
    fn short_chain_is_rejected() {
        match ess(&[1.0; 99]) {
            Err(Error::TooFewDraws(99, 100)) => {}
            other => panic!("expected TooFewDraws, got {other:?}"),
        }
    }

    #[test]
    fn ess_never_exceeds_plausible_bound_for_anticorrelated() {
        // Strongly anticorrelated chains can have ESS > n; the estimator
        // should still return something finite and positive.
        let draws: Vec<f64> = (0..1000).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = ess(&draws).unwrap();
        assert!(e.is_finite() && e > 0.0);
    }
}
