//! Independent ground-truth generators: per-model MCMC samplers, effective
//! sample size, finite-difference Hessians, and quadrature posteriors for
//! tiny instances. Everything here is derived from the model densities
//! directly — none of it reuses the variational code paths it validates.

pub mod ess;
pub mod fd;
pub mod gmm_gibbs;
pub mod np_mh;
pub mod quadrature;
pub mod re_gibbs;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Draws of named scalar functionals from one MCMC run, post burn-in.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub names: Vec<String>,
    /// `draws[i]` is the trajectory of functional `i`.
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
    pub burn_in: usize,
    /// Mean Metropolis acceptance rate, if the sampler has MH steps.
    pub acceptance: Option<f64>,
}

/// Posterior summary computed from [`ChainDraws`].
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Batch-based MC standard error of each sd.
    pub sd_se: Vec<f64>,
    pub ess: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub draws: usize,
    pub seed: u64,
    pub acceptance: Option<f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn functional(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.draws[i])
    }

    /// Summarizes the chain: moments, ESS per functional, and a batch-means
    /// standard error for each reported standard deviation.
    pub fn summarize(&self) -> Result<ChainSummary> {
        let n = self.len();
        if n < 100 {
            return Err(Error::TooFewDraws(n, 100));
        }
        if self.draws.iter().any(|d| d.len() != n) {
            return Err(Error::DimensionMismatch("ragged draw arrays".into()));
        }
        let p = self.names.len();
        let mut mean = vec![0.0; p];
        let mut sd = vec![0.0; p];
        let mut sd_se = vec![0.0; p];
        let mut ess_all = vec![0.0; p];
        let mut cov = DMatrix::zeros(p, p);
        for i in 0..p {
            mean[i] = self.draws[i].iter().sum::<f64>() / n as f64;
        }
        for i in 0..p {
            for j in i..p {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += (self.draws[i][t] - mean[i]) * (self.draws[j][t] - mean[j]);
                }
                let c = acc / (n as f64 - 1.0);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
            sd[i] = cov[(i, i)].sqrt();
            sd_se[i] = batch_se_of_sd(&self.draws[i], mean[i]);
            ess_all[i] = ess::ess(&self.draws[i])?;
        }
        Ok(ChainSummary {
            names: self.names.clone(),
            mean,
            sd,
            sd_se,
            ess: ess_all,
            cov,
            draws: n,
            seed: self.seed,
            acceptance: self.acceptance,
        })
    }
}

impl ChainSummary {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Errors unless every tracked functional reaches `min_ess` effective
    /// draws.
    pub fn require_ess(&self, min_ess: f64) -> Result<()> {
        for (name, &e) in self.names.iter().zip(&self.ess) {
            if e < min_ess {
                return Err(Error::EssTooLow(format!(
                    "functional '{name}' has ESS {e:.1} < {min_ess}"
                )));
            }
        }
        Ok(())
    }
}

/// Standard error of the sample sd via non-overlapping batch sds: split the
/// chain into ~25 batches, take the sd within each, and report the spread of
/// batch sds over sqrt(#batches). Robust to autocorrelation at the batch
/// scale.
pub fn batch_se_of_sd(draws: &[f64], _mean: f64) -> f64 {
    let n = draws.len();
    let num_batches = 25.min(n / 40).max(2);
    let batch_len = n / num_batches;
    let mut batch_sds = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let chunk = &draws[b * batch_len..(b + 1) * batch_len];
        let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let v = chunk.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (chunk.len() as f64 - 1.0);
        batch_sds.push(v.sqrt());
    }
    let mb = batch_sds.iter().sum::<f64>() / num_batches as f64;
    let vb = batch_sds.iter().map(|s| (s - mb).powi(2)).sum::<f64>()
        / (num_batches as f64 - 1.0);
    (vb / num_batches as f64).sqrt()
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch("pearson needs two equal slices, len >= 2".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("pearson undefined for constant input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn summarize_iid_normal_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                3.0 + 2.0 * z
            })
            .collect();
        let chain = ChainDraws {
            names: vec!["x".into()],
            draws: vec![draws],
            seed: 11,
            burn_in: 0,
            acceptance: None,
        };
        let s = chain.summarize().unwrap();
        assert_abs_diff_eq!(s.mean[0], 3.0, epsilon = 0.05);
        assert_abs_diff_eq!(s.sd[0], 2.0, epsilon = 0.05);
        // sd_se should be ~ sd / sqrt(2n) = 0.01; allow a loose band.
        assert!(s.sd_se[0] > 0.002 && s.sd_se[0] < 0.05, "sd_se = {}", s.sd_se[0]);
        assert!(s.ess[0] > 0.9 * n as f64 && s.ess[0] < 1.1 * n as f64);
    }

    #[test]
    fn too_few_draws_is_rejected() {
        let chain = ChainDraws {
            names: vec!["x".into()],
            draws: vec![vec![1.0; 50]],
            seed: 0,
            burn_in: 0,
            acceptance: None,
        };
        match chain.summarize() {
            Err(Error::TooFewDraws(50, 100)) => {}
            other => panic!("expected TooFewDraws, got {other:?}"),
        }
    }

    #[test]
    fn pearson_perfect_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(pearson(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let c = [8.0, 6.0, 4.0, 2.0];
        assert_abs_diff_eq!(pearson(&a, &c).unwrap(), -1.0, epsilon = 1e-12);
    }
}
