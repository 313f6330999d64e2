//! Gibbs sampler for the Gaussian mixture. All full conditionals are exact:
//! labels are categorical, weights Dirichlet, each component mean Gaussian
//! (prior precision `a I` plus `N_k Lambda_k`), and each component precision
//! Wishart via Bartlett decomposition. Independent of the variational code.
//!
//! Mixture posteriors are invariant under component relabeling, so a chain
//! that swaps labels mid-run produces meaningless component-specific moments.
//! The sampler therefore starts from caller-supplied component locations and
//! *fails loudly* (`Error::LabelSwitch`) if any retained draw's components,
//! ordered by the projection used at initialization, come out permuted.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};

use crate::error::{Error, Result};
use crate::models::gmm::{GmmDataset, GmmPriors};
use crate::oracle::ChainDraws;

#[derive(Debug, Clone)]
pub struct GmmGibbsOptions {
    /// Retained draws after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for GmmGibbsOptions {
    fn default() -> Self {
        Self { iterations: 20_000, burn_in: 4_000 }
    }
}

/// Draws one Wishart(V, dof) matrix by the Bartlett construction.
pub fn sample_wishart(v: &DMatrix<f64>, dof: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let p = v.nrows();
    if dof <= p as f64 - 1.0 {
        return Err(Error::Domain(format!(
            "Wishart dof {dof} must exceed dimension - 1 = {}",
            p - 1
        )));
    }
    let l = v
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("Wishart scale matrix is not SPD".into()))?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi_df = dof - i as f64;
        let chi_sq = GammaDist::new(0.5 * chi_df, 2.0)
            .map_err(|e| Error::Numerical(format!("Bartlett chi-square: {e}")))?
            .sample(rng);
        a[(i, i)] = chi_sq.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = &l * &a;
    Ok(&la * la.transpose())
}

fn sample_dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let g = GammaDist::new(a, 1.0)
            .map_err(|e| Error::Numerical(format!("Dirichlet component: {e}")))?
            .sample(rng);
        draws.push(g);
    }
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("Dirichlet draw summed to zero".into()));
    }
    for d in &mut draws {
        *d /= total;
    }
    Ok(draws)
}

/// Projection used for the label-switch guard: components are identified by
/// the ordering of their mean-coordinate sums (ties broken by first
/// coordinate), matching `models::gmm::component_order`.
fn projection(mean: &DVector<f64>) -> (f64, f64) {
    (mean.sum(), mean[0])
}

fn order_of(means: &[DVector<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..means.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, fa) = projection(&means[a]);
        let (sb, fb) = projection(&means[b]);
        sa.partial_cmp(&sb).unwrap().then(fa.partial_cmp(&fb).unwrap())
    });
    idx
}

/// Runs the sampler from the supplied starting component means and weights
/// (component covariances start at identity). Deterministic given the seed.
pub fn run(
    data: &GmmDataset,
    priors: &GmmPriors,
    init_means: &[Vec<f64>],
    init_weights: &[f64],
    opts: &GmmGibbsOptions,
    seed: u64,
) -> Result<ChainDraws> {
    data.validate()?;
    priors.validate()?;
    let n = data.len();
    let p = data.dim();
    let k = init_means.len();
    if k == 0 || init_weights.len() != k {
        return Err(Error::Config("need matching nonempty init means and weights".into()));
    }
    if init_means.iter().any(|m| m.len() != p) {
        return Err(Error::Config("init mean dimension mismatch".into()));
    }
    if opts.iterations == 0 {
        return Err(Error::Config("need at least one retained iteration".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<DVector<f64>> =
        (0..n).map(|i| DVector::from_column_slice(&data.x[i])).collect();

    let mut mu: Vec<DVector<f64>> =
        init_means.iter().map(|m| DVector::from_column_slice(m)).collect();
    let mut lambda: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::identity(p, p)).collect();
    let wsum: f64 = init_weights.iter().sum();
    let mut pi: Vec<f64> = init_weights.iter().map(|w| w / wsum).collect();
    let mut labels = vec![0usize; n];

    let reference_order = order_of(&mu);
    let v0_inv = DMatrix::<f64>::identity(p, p) / priors.wishart_scale;

    let vech: Vec<(usize, usize)> = (0..p)
        .flat_map(|a| (a..p).map(move |b| (a, b)))
        .collect();
    let mut names: Vec<String> = Vec::new();
    for c in 0..k {
        for d in 0..p {
            names.push(format!("mu[{c},{d}]"));
        }
    }
    for c in 0..k {
        for &(a, b) in &vech {
            names.push(format!("lambda[{c};{a},{b}]"));
        }
        names.push(format!("log_det_lambda[{c}]"));
    }
    for c in 0..k {
        names.push(format!("pi[{c}]"));
    }
    for c in 0..k {
        names.push(format!("log_pi[{c}]"));
    }
    let mut draws: Vec<Vec<f64>> =
        names.iter().map(|_| Vec::with_capacity(opts.iterations)).collect();

    let total = opts.burn_in + opts.iterations;
    let mut logits = vec![0.0f64; k];
    for iter in 0..total {
        // Labels: categorical in the component log densities.
        let log_pi: Vec<f64> = pi.iter().map(|w| w.ln()).collect();
        let half_log_det: Vec<f64> = lambda
            .iter()
            .map(|l| {
                l.clone()
                    .cholesky()
                    .map(|c| (0..p).map(|i| c.l()[(i, i)].ln()).sum::<f64>())
                    .ok_or_else(|| Error::Domain("component precision lost positive definiteness".into()))
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            for c in 0..k {
                let d = &xs[i] - &mu[c];
                logits[c] = log_pi[c] + half_log_det[c] - 0.5 * (&lambda[c] * &d).dot(&d);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut cum = 0.0;
            let weights: Vec<f64> = logits
                .iter()
                .map(|l| {
                    cum += (l - m).exp();
                    cum
                })
                .collect();
            let u: f64 = rng.random::<f64>() * cum;
            labels[i] = weights.iter().position(|&w| u <= w).unwrap_or(k - 1);
        }

        // Sufficient statistics per component.
        let mut counts = vec![0usize; k];
        let mut sums: Vec<DVector<f64>> = (0..k).map(|_| DVector::zeros(p)).collect();
        for i in 0..n {
            counts[labels[i]] += 1;
            sums[labels[i]] += &xs[i];
        }

        // Weights.
        let alpha: Vec<f64> =
            counts.iter().map(|&c| priors.dirichlet_alpha + c as f64).collect();
        pi = sample_dirichlet(&alpha, &mut rng)?;

        // Means, then precisions (conditional on the freshly drawn means).
        for c in 0..k {
            let prec = DMatrix::<f64>::identity(p, p) * priors.mu_precision
                + &lambda[c] * counts[c] as f64;
            let chol = prec
                .cholesky()
                .ok_or_else(|| Error::Numerical("mean conditional precision not SPD".into()))?;
            let mean = chol.solve(&(&lambda[c] * &sums[c]));
            let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let u = chol
                .l()
                .transpose()
                .solve_upper_triangular(&eps)
                .ok_or_else(|| Error::Numerical("mean conditional solve failed".into()))?;
            mu[c] = mean + u;
        }
        for c in 0..k {
            let mut scatter = v0_inv.clone();
            for i in 0..n {
                if labels[i] == c {
                    let d = &xs[i] - &mu[c];
                    scatter += &d * d.transpose();
                }
            }
            let scale = scatter
                .try_inverse()
                .ok_or_else(|| Error::Numerical("Wishart scale inversion failed".into()))?;
            let dof = priors.wishart_dof + counts[c] as f64;
            if dof <= p as f64 - 1.0 {
                return Err(Error::Domain(format!(
                    "component {c} emptied (count {}): Wishart conditional dof {dof} invalid",
                    counts[c]
                )));
            }
            lambda[c] = sample_wishart(&scale, dof, &mut rng)?;
        }

        if iter >= opts.burn_in {
            if k > 1 && order_of(&mu) != reference_order {
                return Err(Error::LabelSwitch(format!(
                    "component ordering changed at retained iteration {}",
                    iter - opts.burn_in
                )));
            }
            let mut slot = 0;
            for c in 0..k {
                for d in 0..p {
                    draws[slot].push(mu[c][d]);
                    slot += 1;
                }
            }
            for c in 0..k {
                for &(a, b) in &vech {
                    draws[slot].push(lambda[c][(a, b)]);
                    slot += 1;
                }
                let ld = lambda[c]
                    .clone()
                    .cholesky()
                    .map(|ch| 2.0 * (0..p).map(|i| ch.l()[(i, i)].ln()).sum::<f64>())
                    .ok_or_else(|| Error::Domain("precision draw not SPD".into()))?;
                draws[slot].push(ld);
                slot += 1;
            }
            for c in 0..k {
                draws[slot].push(pi[c]);
                slot += 1;
            }
            for c in 0..k {
                draws[slot].push(pi[c].ln());
                slot += 1;
            }
        }
    }

    Ok(ChainDraws { names, draws, seed, burn_in: opts.burn_in, acceptance: None })
}
