//! Finite Gaussian mixture with conjugate component priors:
//!
//! ```text
//! x_n | z_n = k ~ N(mu_k, Lambda_k^-1),    z_n ~ Categorical(pi),
//! mu_k ~ N(0, (a I)^-1),   Lambda_k ~ Wishart(v0 I, n0),   pi ~ Dirichlet(alpha0).
//! ```
//!
//! All coordinate updates are conjugate. The expected log posterior is
//! multilinear in the factor means, so the latent-latent Hessian block is
//! identically zero and the corrected-covariance reduction over the `N`
//! indicator factors needs no inner solve; both reduction phases scale
//! linearly in `N`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::engine::{
    assemble_v, schur_reduce, schur_solve, HessianMatrix, LrvbOptions, LrvbResult, ZSolverKind,
    ZzBlock,
};
use crate::error::{Error, Result};
use crate::expfam::{FactorFamily, FactorState};
use crate::layout::{BlockLayout, LayoutBuilder, Partition};
use crate::linalg::{vech_len, vech_pairs, vech_unpack};
use crate::optimizer::{coordinate_ascent, FitOptions, FitTrace, ModelProblem, VariationalState};
use crate::special::ln_gamma;

const LN_2PI: f64 = 1.8378770664093453;

/// Observations, one row per point.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GmmDataset {
    pub x: Vec<Vec<f64>>,
}

impl GmmDataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |row| row.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let p = self.dim();
        if p == 0 || self.x.iter().any(|row| row.len() != p) {
            return Err(Error::Config("rows must be nonempty and equal-length".into()));
        }
        if !self.x.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite value in dataset".into()));
        }
        Ok(())
    }
}

/// Prior hyperparameters: `mu_k ~ N(0, (mu_precision I)^-1)`,
/// `Lambda_k ~ Wishart(wishart_scale I, wishart_dof)` (entering the log
/// posterior as `(n0 - P - 1)/2 ln|Lambda| - tr((v0 I)^-1 Lambda)/2`),
/// `pi ~ Dirichlet(dirichlet_alpha, ..., dirichlet_alpha)`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GmmPriors {
    pub mu_precision: f64,
    pub wishart_scale: f64,
    pub wishart_dof: f64,
    pub dirichlet_alpha: f64,
}

impl Default for GmmPriors {
    fn default() -> Self {
        Self {
            mu_precision: 0.01,
            wishart_scale: 0.01,
            wishart_dof: 1.0,
            dirichlet_alpha: 5.0,
        }
    }
}

impl GmmPriors {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_precision > 0.0
            && self.wishart_scale > 0.0
            && self.wishart_dof > 0.0
            && self.dirichlet_alpha > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("mixture priors must be positive".into()))
        }
    }
}

/// Simulation settings. Component means are placed on a circle in the first
/// two coordinates with radius `separation / 2`, so for two components
/// `separation` is exactly the distance between the means; all components
/// draw with identity covariance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GmmConfig {
    pub n: usize,
    pub num_components: usize,
    pub dim: usize,
    /// Mixing weights; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub separation: f64,
}

/// Generating values recorded by the simulator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GmmTruth {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn simulate(cfg: &GmmConfig, seed: u64) -> Result<(GmmDataset, GmmTruth)> {
    let (n, k, p) = (cfg.n, cfg.num_components, cfg.dim);
    if n == 0 || k == 0 || p == 0 {
        return Err(Error::Config("n, num_components, dim must be positive".into()));
    }
    let weights = match &cfg.weights {
        Some(w) => {
            if w.len() != k || w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config("weights must be positive, one per component".into()));
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect::<Vec<_>>()
        }
        None => vec![1.0 / k as f64; k],
    };
    if !(cfg.separation >= 0.0) {
        return Err(Error::Config("separation must be nonnegative".into()));
    }

    let radius = 0.5 * cfg.separation;
    let means: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut m = vec![0.0; p];
            if k > 1 {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                m[0] = radius * angle.cos();
                if p > 1 {
                    m[1] = radius * angle.sin();
                } else {
                    // One dimension: alternate signs along the line.
                    m[0] = if j % 2 == 0 { radius } else { -radius };
                }
            }
            m
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut zi = k - 1;
        for (j, wj) in weights.iter().enumerate() {
            acc += wj;
            if u < acc {
                zi = j;
                break;
            }
        }
        let row: Vec<f64> = (0..p)
            .map(|c| {
                let e: f64 = StandardNormal.sample(&mut rng);
                means[zi][c] + e
            })
            .collect();
        x.push(row);
        labels.push(zi);
    }
    let data = GmmDataset { x };
    data.validate()?;
    Ok((data, GmmTruth { weights, means, labels }))
}

/// Posterior responsibilities under the generating parameters (identity
/// component covariances), used to seed fits near the simulation truth.
pub fn truth_responsibilities(data: &GmmDataset, truth: &GmmTruth) -> Vec<Vec<f64>> {
    let k = truth.weights.len();
    data.x
        .iter()
        .map(|row| {
            let logits: Vec<f64> = (0..k)
                .map(|j| {
                    let d2: f64 = row
                        .iter()
                        .zip(&truth.means[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    truth.weights[j].ln() - 0.5 * d2
                })
                .collect();
            softmax(&logits)
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// How to seed the responsibilities before the first sweep.
#[derive(Debug, Clone)]
pub enum GmmInit {
    /// Hard k-means assignments (farthest-point seeding, a few Lloyd
    /// rounds), softened so every logit stays finite.
    KMeans { seed: u64 },
    /// Explicit responsibilities, one simplex row per observation.
    Responsibilities(Vec<Vec<f64>>),
}

fn kmeans_responsibilities(x: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.len();
    let p = x[0].len();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(x[rng.random_range(0..n)].clone());
    while centers.len() < k {
        // Farthest point from the chosen centers.
        let far = (0..n)
            .max_by(|&i, &j| {
                let di = centers.iter().map(|c| dist2(&x[i], c)).fold(f64::INFINITY, f64::min);
                let dj = centers.iter().map(|c| dist2(&x[j], c)).fold(f64::INFINITY, f64::min);
                di.total_cmp(&dj)
            })
            .unwrap();
        centers.push(x[far].clone());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for i in 0..n {
            assign[i] = (0..k)
                .min_by(|&a, &b| dist2(&x[i], &centers[a]).total_cmp(&dist2(&x[i], &centers[b])))
                .unwrap();
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for c in 0..p {
                sums[assign[i]][c] += x[i][c];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&x[a], &centers[assign[a]])
                            .total_cmp(&dist2(&x[b], &centers[assign[b]]))
                    })
                    .unwrap();
                centers[j] = x[far].clone();
            } else {
                for c in 0..p {
                    centers[j][c] = sums[j][c] / counts[j] as f64;
                }
            }
        }
    }
    let soft_hit = 0.95;
    let soft_miss = if k > 1 { (1.0 - soft_hit) / (k - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            (0..k)
                .map(|j| if k == 1 {
                    1.0
                } else if j == assign[i] {
                    soft_hit
                } else {
                    soft_miss
                })
                .collect()
        })
        .collect()
}

/// Mean-field problem for the mixture.
#[derive(Debug, Clone)]
pub struct GmmProblem {
    data: GmmDataset,
    priors: GmmPriors,
    k: usize,
    p: usize,
    layout: BlockLayout,
    xs: Vec<DVector<f64>>,
    init_resp: Vec<Vec<f64>>,
}

impl GmmProblem {
    pub fn new(data: GmmDataset, num_components: usize, priors: GmmPriors, init: GmmInit) -> Result<Self> {
        data.validate()?;
        priors.validate()?;
        if num_components == 0 {
            return Err(Error::Config("need at least one component".into()));
        }
        let k = num_components;
        let p = data.dim();
        let n = data.len();

        let init_resp = match init {
            GmmInit::KMeans { seed } => kmeans_responsibilities(&data.x, k, seed),
            GmmInit::Responsibilities(r) => {
                if r.len() != n || r.iter().any(|row| row.len() != k) {
                    return Err(Error::Config(
                        "responsibilities must be one length-K row per observation".into(),
                    ));
                }
                r
            }
        };

        let mut b = LayoutBuilder::new();
        for j in 0..k {
            b.push_named(
                &format!("mu[{j}]"),
                FactorFamily::GaussianMv(p),
                Partition::Alpha,
                (0..p)
                    .map(|a| format!("mu[{j},{a}]"))
                    .chain(vech_pairs(p).map(|(a, c)| format!("mu_sq[{j};{a},{c}]")))
                    .collect(),
            );
        }
        for j in 0..k {
            b.push_named(
                &format!("lambda[{j}]"),
                FactorFamily::Wishart(p),
                Partition::Alpha,
                vech_pairs(p)
                    .map(|(a, c)| format!("lambda[{j};{a},{c}]"))
                    .chain(std::iter::once(format!("log_det_lambda[{j}]")))
                    .collect(),
            );
        }
        b.push_named(
            "pi",
            FactorFamily::Dirichlet(k),
            Partition::Alpha,
            (0..k).map(|j| format!("log_pi[{j}]")).collect(),
        );
        for i in 0..n {
            b.push_named(
                &format!("z[{i}]"),
                FactorFamily::Multinoulli(k),
                Partition::Z,
                (0..k).map(|j| format!("z[{i}={j}]")).collect(),
            );
        }
        let layout = b.build()?;
        let xs = data.x.iter().map(|row| DVector::from_column_slice(row)).collect();
        Ok(Self { data, priors, k, p, layout, xs, init_resp })
    }

    pub fn data(&self) -> &GmmDataset {
        &self.data
    }

    pub fn priors(&self) -> &GmmPriors {
        &self.priors
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    fn t(&self) -> usize {
        vech_len(self.p)
    }

    /// Offset of the mu_k statistics inside the global mean vector.
    pub fn mu_offset(&self, k: usize) -> usize {
        k * (self.p + self.t())
    }

    pub fn lambda_offset(&self, k: usize) -> usize {
        self.k * (self.p + self.t()) + k * (self.t() + 1)
    }

    pub fn pi_offset(&self) -> usize {
        self.k * (self.p + self.t()) + self.k * (self.t() + 1)
    }

    pub fn z_offset(&self, n: usize) -> usize {
        self.layout.alpha_dim() + n * self.k
    }

    /// `E mu_k` read from the mean vector.
    fn mu_bar(&self, m: &DVector<f64>, k: usize) -> DVector<f64> {
        let o = self.mu_offset(k);
        DVector::from_column_slice(&m.as_slice()[o..o + self.p])
    }

    /// `E[mu_k mu_k^T]` read from the mean vector.
    fn m2_bar(&self, m: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let o = self.mu_offset(k) + self.p;
        vech_unpack(self.p, &m.as_slice()[o..o + self.t()])
    }

    /// `E Lambda_k` read from the mean vector.
    fn lambda_bar(&self, m: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let o = self.lambda_offset(k);
        vech_unpack(self.p, &m.as_slice()[o..o + self.t()])
    }

    fn log_det_bar(&self, m: &DVector<f64>, k: usize) -> f64 {
        m[self.lambda_offset(k) + self.t()]
    }

    fn log_pi_bar(&self, m: &DVector<f64>, k: usize) -> f64 {
        m[self.pi_offset() + k]
    }

    fn resp(&self, m: &DVector<f64>, n: usize, k: usize) -> f64 {
        m[self.z_offset(n) + k]
    }

    /// Component occupancy `N_k = sum_n E z_{nk}`.
    fn occupancy(&self, m: &DVector<f64>, k: usize) -> f64 {
        (0..self.data.len()).map(|n| self.resp(m, n, k)).sum()
    }

    /// Posterior component means, one per component.
    pub fn component_means(&self, m: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.k).map(|k| self.mu_bar(m, k)).collect()
    }

    /// `E[(x_n - mu_k)(x_n - mu_k)^T]` under the mu_k factor.
    fn centered_second_moment(&self, m: &DVector<f64>, n: usize, k: usize) -> DMatrix<f64> {
        let x = &self.xs[n];
        let mu = self.mu_bar(m, k);
        let m2 = self.m2_bar(m, k);
        x * x.transpose() - x * mu.transpose() - mu * x.transpose() + m2
    }
}

/// Sorts component indices by the sum of posterior mean coordinates (ties by
/// first coordinate). Both the variational fit and an MCMC chain can be put
/// through this to align their component labels.
pub fn component_order(means: &[DVector<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..means.len()).collect();
    idx.sort_by(|&a, &b| {
        let sa: f64 = means[a].sum();
        let sb: f64 = means[b].sum();
        sa.total_cmp(&sb).then_with(|| means[a][0].total_cmp(&means[b][0]))
    });
    idx
}

impl ModelProblem for GmmProblem {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn initial_state(&self) -> Result<VariationalState> {
        let (p, t) = (self.p, self.t());
        let mut factors = Vec::with_capacity(self.layout.num_factors());
        // mu_k: standard normal.
        let mut mu_mean = DVector::zeros(p + t);
        for (idx, (a, c)) in vech_pairs(p).enumerate() {
            mu_mean[p + idx] = if a == c { 1.0 } else { 0.0 };
        }
        for _ in 0..self.k {
            factors.push(FactorState::from_mean(FactorFamily::GaussianMv(p), mu_mean.clone())?);
        }
        // lambda_k: E Lambda = I with dof p + 2.
        let dof = p as f64 + 2.0;
        let mut w_eta = DVector::zeros(t + 1);
        for (idx, (a, c)) in vech_pairs(p).enumerate() {
            w_eta[idx] = if a == c { -0.5 * dof } else { 0.0 };
        }
        w_eta[t] = 0.5 * (dof - p as f64 - 1.0);
        for _ in 0..self.k {
            factors.push(FactorState::from_natural(FactorFamily::Wishart(p), w_eta.clone())?);
        }
        // pi: the prior.
        factors.push(FactorState::from_natural(
            FactorFamily::Dirichlet(self.k),
            DVector::from_element(self.k, self.priors.dirichlet_alpha - 1.0),
        )?);
        // z_n: the seeded responsibilities, clamped into the open simplex.
        for row in &self.init_resp {
            let mut r: Vec<f64> = row.iter().map(|&v| v.max(1e-8)).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            factors.push(FactorState::from_mean(
                FactorFamily::Multinoulli(self.k),
                DVector::from_vec(r),
            )?);
        }
        VariationalState::from_factors(&self.layout, &factors)
    }

    fn update_factor(&self, state: &mut VariationalState, j: usize) -> Result<()> {
        let (p, t, k) = (self.p, self.t(), self.k);
        if j < k {
            // mu_j | rest: precision N_j E Lambda_j + a I, linear term
            // E Lambda_j sum_n r_nj x_n.
            let lam = self.lambda_bar(&state.m, j);
            let nk = self.occupancy(&state.m, j);
            let mut sx = DVector::zeros(p);
            for n in 0..self.data.len() {
                sx += self.resp(&state.m, n, j) * &self.xs[n];
            }
            let mut prec = nk * &lam;
            for a in 0..p {
                prec[(a, a)] += self.priors.mu_precision;
            }
            let lin = &lam * sx;
            let mut eta = DVector::zeros(p + t);
            eta.rows_mut(0, p).copy_from(&lin);
            for (idx, (a, c)) in vech_pairs(p).enumerate() {
                eta[p + idx] = if a == c { -0.5 * prec[(a, a)] } else { -prec[(a, c)] };
            }
            state.set_factor(&self.layout, j, &FactorState::from_natural(FactorFamily::GaussianMv(p), eta)?)
        } else if j < 2 * k {
            let comp = j - k;
            let nk = self.occupancy(&state.m, comp);
            if nk < p as f64 + 1.0 {
                return Err(Error::Domain(format!(
                    "component {comp} holds expected count {nk:.3e} < dim + 1; \
                     the mixture has degenerated"
                )));
            }
            // V^-1 = v0^-1 I + sum_n r_nk E[(x_n - mu)(x_n - mu)^T].
            let mut v_inv = DMatrix::identity(p, p) / self.priors.wishart_scale;
            for n in 0..self.data.len() {
                let r = self.resp(&state.m, n, comp);
                if r > 0.0 {
                    v_inv += r * self.centered_second_moment(&state.m, n, comp);
                }
            }
            let dof = self.priors.wishart_dof + nk;
            let mut eta = DVector::zeros(t + 1);
            for (idx, (a, c)) in vech_pairs(p).enumerate() {
                eta[idx] = if a == c { -0.5 * v_inv[(a, a)] } else { -v_inv[(a, c)] };
            }
            eta[t] = 0.5 * (dof - p as f64 - 1.0);
            state.set_factor(&self.layout, j, &FactorState::from_natural(FactorFamily::Wishart(p), eta)?)
        } else if j == 2 * k {
            let mut eta = DVector::zeros(k);
            for comp in 0..k {
                eta[comp] = self.priors.dirichlet_alpha + self.occupancy(&state.m, comp) - 1.0;
            }
            state.set_factor(&self.layout, j, &FactorState::from_natural(FactorFamily::Dirichlet(k), eta)?)
        } else {
            let n = j - 2 * k - 1;
            let x = &self.xs[n];
            let mut logits = DVector::zeros(k);
            for comp in 0..k {
                let lam = self.lambda_bar(&state.m, comp);
                let mu = self.mu_bar(&state.m, comp);
                let m2 = self.m2_bar(&state.m, comp);
                let quad = (x.transpose() * &lam * x)[(0, 0)] - 2.0 * (x.transpose() * &lam * mu)[(0, 0)]
                    + (&lam * m2).trace();
                logits[comp] = self.log_pi_bar(&state.m, comp)
                    + 0.5 * self.log_det_bar(&state.m, comp)
                    - 0.5 * quad;
            }
            state.set_factor(
                &self.layout,
                j,
                &FactorState::from_natural(FactorFamily::Multinoulli(k), logits)?,
            )
        }
    }

    fn expected_log_posterior(&self, m: &DVector<f64>) -> Result<f64> {
        let (p, k) = (self.p as f64, self.k);
        let pr = &self.priors;
        let mut total = 0.0;
        for comp in 0..k {
            let lam = self.lambda_bar(m, comp);
            let mu = self.mu_bar(m, comp);
            let m2 = self.m2_bar(m, comp);
            let log_det = self.log_det_bar(m, comp);
            let log_pi = self.log_pi_bar(m, comp);
            let lam_mu = &lam * &mu;
            let tr_lam_m2 = (&lam * &m2).trace();
            let base = log_pi + 0.5 * log_det - 0.5 * p * LN_2PI;
            for n in 0..self.data.len() {
                let r = self.resp(m, n, comp);
                if r == 0.0 {
                    continue;
                }
                let x = &self.xs[n];
                let quad = (x.transpose() * &lam * x)[(0, 0)] - 2.0 * x.dot(&lam_mu) + tr_lam_m2;
                total += r * (base - 0.5 * quad);
            }
            // mu prior.
            total += 0.5 * p * (pr.mu_precision.ln() - LN_2PI) - 0.5 * pr.mu_precision * m2.trace();
            // Wishart prior density terms. Its normalizing constant is omitted:
            // it does not depend on the parameters, and for dof <= P - 1 the
            // prior is improper so no finite constant exists.
            total += 0.5 * (pr.wishart_dof - p - 1.0) * log_det
                - 0.5 * lam.trace() / pr.wishart_scale;
            // pi prior (statistic term; constants added once below).
            total += (pr.dirichlet_alpha - 1.0) * log_pi;
        }
        total += ln_gamma(k as f64 * pr.dirichlet_alpha) - k as f64 * ln_gamma(pr.dirichlet_alpha);
        Ok(total)
    }

    fn hessian(&self, m: &DVector<f64>) -> Result<HessianMatrix> {
        let (p, t, k) = (self.p, self.t(), self.k);
        let n_obs = self.data.len();
        let ad = self.layout.alpha_dim();
        let zd = self.layout.z_dim();

        let mut aa = DMatrix::zeros(ad, ad);
        let mut az = DMatrix::zeros(ad, zd);
        for comp in 0..k {
            let o_mu = self.mu_offset(comp);
            let o_la = self.lambda_offset(comp);
            let o_pi = self.pi_offset();
            let lam = self.lambda_bar(m, comp);
            let mu = self.mu_bar(m, comp);
            let m2 = self.m2_bar(m, comp);
            let nk = self.occupancy(m, comp);
            let mut sx = DVector::zeros(p);
            for n in 0..n_obs {
                sx += self.resp(m, n, comp) * &self.xs[n];
            }

            // alpha-alpha: mu_k and mu_k mu_k' statistics against Lambda_k.
            for (idx, (a, c)) in vech_pairs(p).enumerate() {
                let col = o_la + idx;
                if a == c {
                    aa[(o_mu + a, col)] = sx[a];
                } else {
                    aa[(o_mu + a, col)] = sx[c];
                    aa[(o_mu + c, col)] = sx[a];
                }
                let w = if a == c { 0.5 } else { 1.0 };
                aa[(o_mu + p + idx, col)] = -w * nk;
            }

            // alpha-z: one column per (n, comp).
            for n in 0..n_obs {
                let col = n * k + comp;
                let x = &self.xs[n];
                let lx = &lam * x;
                for a in 0..p {
                    az[(o_mu + a, col)] = lx[a];
                }
                for (idx, (a, c)) in vech_pairs(p).enumerate() {
                    let w = if a == c { 0.5 } else { 1.0 };
                    az[(o_mu + p + idx, col)] = -w * lam[(a, c)];
                    az[(o_la + idx, col)] =
                        -w * (x[a] * x[c] - mu[a] * x[c] - mu[c] * x[a] + m2[(a, c)]);
                }
                az[(o_la + t, col)] = 0.5;
                az[(o_pi + comp, col)] = 1.0;
            }
        }
        // Symmetrize the mu-Lambda coupling.
        let aa = &aa + aa.transpose();

        HessianMatrix::new(aa, az, ZzBlock::Zero)
    }

    fn z_solver(&self) -> ZSolverKind {
        ZSolverKind::Identity
    }
}

// ----- scaling harness -----

/// One grid cell of the scaling study.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ScalingCell {
    pub n: usize,
    pub num_components: usize,
    pub dim: usize,
}

/// One timing observation. `phase` is either `h_schur_products` (Hessian and
/// statistic-covariance assembly plus the Schur reduction, the part linear in
/// `n`) or `alpha_solve` (the final alpha-sized solve).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub num_components: usize,
    pub dim: usize,
    pub rep: usize,
    pub phase: String,
    pub seconds: f64,
}

/// Fits each grid cell once, then times the two corrected-covariance phases
/// `reps` times per cell.
pub fn scaling_run(cells: &[ScalingCell], reps: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(cells.len() * reps * 2);
    for (ci, cell) in cells.iter().enumerate() {
        let cfg = GmmConfig {
            n: cell.n,
            num_components: cell.num_components,
            dim: cell.dim,
            weights: None,
            separation: 6.0,
        };
        let (data, truth) = simulate(&cfg, seed.wrapping_add(ci as u64))?;
        let resp = truth_responsibilities(&data, &truth);
        let problem = GmmProblem::new(
            data,
            cell.num_components,
            GmmPriors::default(),
            GmmInit::Responsibilities(resp),
        )?;
        let opts = FitOptions { tol: 1e-8, ..Default::default() };
        let (state, _trace) = coordinate_ascent(&problem, problem.initial_state()?, &opts)?;
        for rep in 0..reps {
            let t0 = Instant::now();
            let h = problem.hessian(&state.m)?;
            let v = assemble_v(&state.factors(problem.layout()), problem.layout())?;
            let sys = schur_reduce(&v, &h, problem.z_solver())?;
            let products = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let _ = schur_solve(&sys, &v, &h, &LrvbOptions::default())?;
            let solve = t1.elapsed().as_secs_f64();
            rows.push(ScalingRow {
                n: cell.n,
                num_components: cell.num_components,
                dim: cell.dim,
                rep,
                phase: "h_schur_products".into(),
                seconds: products,
            });
            rows.push(ScalingRow {
                n: cell.n,
                num_components: cell.num_components,
                dim: cell.dim,
                rep,
                phase: "alpha_solve".into(),
                seconds: solve,
            });
        }
    }
    Ok(rows)
}

/// Convenience used by tests and the command-line tools: fit the mixture and
/// return the corrected alpha covariance alongside the state.
pub fn fit_and_correct(
    problem: &GmmProblem,
    fit_opts: &FitOptions,
    lrvb_opts: &LrvbOptions,
) -> Result<(VariationalState, FitTrace, LrvbResult)> {
    let (state, trace) = coordinate_ascent(problem, problem.initial_state()?, fit_opts)?;
    let v = assemble_v(&state.factors(problem.layout()), problem.layout())?;
    let h = problem.hessian(&state.m)?;
    let result = schur_solve(&schur_reduce(&v, &h, problem.z_solver())?, &v, &h, lrvb_opts)?;
    Ok((state, trace, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{check_fixed_point, elbo};
    use crate::oracle::fd::fd_hessian;
    use approx::assert_abs_diff_eq;

    fn two_component_problem(n: usize, separation: f64, seed: u64) -> (GmmProblem, GmmTruth) {
        let cfg = GmmConfig {
            n,
            num_components: 2,
            dim: 2,
            weights: None,
            separation,
        };
        let (data, truth) = simulate(&cfg, seed).unwrap();
        let resp = truth_responsibilities(&data, &truth);
        let problem = GmmProblem::new(
            data,
            2,
            GmmPriors::default(),
            GmmInit::Responsibilities(resp),
        )
        .unwrap();
        (problem, truth)
    }

    #[test]
    fn simulate_is_deterministic_and_respects_weights() {
        let cfg = GmmConfig {
            n: 600,
            num_components: 3,
            dim: 2,
            weights: Some(vec![1.0, 2.0, 3.0]),
            separation: 4.0,
        };
        let (a, ta) = simulate(&cfg, 7).unwrap();
        let (b, _) = simulate(&cfg, 7).unwrap();
        assert_eq!(a.x, b.x);
        let counts: Vec<usize> =
            (0..3).map(|j| ta.labels.iter().filter(|&&l| l == j).count()).collect();
        // Expected 100 / 200 / 300.
        assert!(counts[0] > 50 && counts[0] < 150, "{counts:?}");
        assert!(counts[2] > 240 && counts[2] < 360, "{counts:?}");
        // Means sit at the requested distance.
        let d: f64 = ta.means[0]
            .iter()
            .zip(&ta.means[1])
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert!(d > 3.0 && d < 4.1, "distance {d}");
    }

    #[test]
    fn single_component_updates_match_hand_computation() {
        // Two scalar observations, one component, responsibilities fixed at 1.
        let data = GmmDataset { x: vec![vec![1.0], vec![3.0]] };
        let problem = GmmProblem::new(
            data,
            1,
            GmmPriors::default(),
            GmmInit::Responsibilities(vec![vec![1.0], vec![1.0]]),
        )
        .unwrap();
        let mut state = problem.initial_state().unwrap();

        // mu update from the initial state (E Lambda = 1):
        // precision = 2 * 1 + 0.01, linear = 1 * (1 + 3) = 4.
        problem.update_factor(&mut state, 0).unwrap();
        let f = state.factor(problem.layout(), 0);
        assert_abs_diff_eq!(f.natural[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.natural[1], -0.5 * 2.01, epsilon = 1e-12);
        let mu = 4.0 / 2.01;
        assert_abs_diff_eq!(f.mean[0], mu, epsilon = 1e-12);

        // lambda update with the refreshed mu factor:
        // V^-1 = 100 + sum (x^2 - 2 x mu + E mu^2), dof = 1 + 2.
        let e_mu2 = 1.0 / 2.01 + mu * mu;
        let s = (1.0 - 2.0 * mu + e_mu2) + (9.0 - 6.0 * mu + e_mu2);
        problem.update_factor(&mut state, 1).unwrap();
        let f = state.factor(problem.layout(), 1);
        assert_abs_diff_eq!(f.natural[0], -0.5 * (100.0 + s), epsilon = 1e-9);
        assert_abs_diff_eq!(f.natural[1], 0.5 * (3.0 - 2.0), epsilon = 1e-12);

        // pi update: alpha = 5 + 2, with K = 1 the naturals are alpha - 1.
        problem.update_factor(&mut state, 2).unwrap();
        let f = state.factor(problem.layout(), 2);
        assert_abs_diff_eq!(f.natural[0], 6.0, epsilon = 1e-12);
        // E ln pi = 0 identically when K = 1.
        assert_abs_diff_eq!(f.mean[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_separated_components() {
        let (problem, truth) = two_component_problem(400, 6.0, 13);
        let opts = FitOptions { tol: 1e-10, ..Default::default() };
        let (state, trace) =
            coordinate_ascent(&problem, problem.initial_state().unwrap(), &opts).unwrap();
        assert!(trace.converged, "no convergence: {trace:?}");
        for w in trace.elbo.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "ELBO fell: {} -> {}", w[0], w[1]);
        }
        assert!(check_fixed_point(&problem, &state).unwrap() < 1e-8);
        assert!(elbo(&problem, &state).unwrap().is_finite());

        let means = problem.component_means(&state.m);
        let order = component_order(&means);
        let truth_means: Vec<DVector<f64>> =
            truth.means.iter().map(|v| DVector::from_column_slice(v)).collect();
        let truth_order = component_order(&truth_means);
        for (i, &k) in order.iter().enumerate() {
            let err = (&means[k] - &truth_means[truth_order[i]]).amax();
            assert!(err < 0.35, "component mean off by {err}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        // A unit Wishart scale keeps tiny-sample fits stable (the default
        // scale 0.01 inflates component variances when a component holds
        // fewer than ~100 points and such fits can legitimately merge).
        let cfg = GmmConfig { n: 25, num_components: 2, dim: 2, weights: None, separation: 5.0 };
        let (data, truth) = simulate(&cfg, 3).unwrap();
        let resp = truth_responsibilities(&data, &truth);
        let priors = GmmPriors { wishart_scale: 1.0, ..Default::default() };
        let problem =
            GmmProblem::new(data, 2, priors, GmmInit::Responsibilities(resp)).unwrap();
        let opts = FitOptions { tol: 1e-10, ..Default::default() };
        let (state, _) =
            coordinate_ascent(&problem, problem.initial_state().unwrap(), &opts).unwrap();
        let h = problem.hessian(&state.m).unwrap();
        assert!(matches!(h.zz, ZzBlock::Zero));
        let dense = h.to_dense();
        let fd = fd_hessian(
            &|m: &DVector<f64>| problem.expected_log_posterior(m),
            &state.m,
            1e-4,
        )
        .unwrap();
        let err = (&dense - &fd).amax();
        assert!(err < 1e-4, "analytic vs finite differences: {err:.3e}");
    }

    #[test]
    fn empty_component_is_rejected() {
        let cfg = GmmConfig { n: 40, num_components: 1, dim: 2, weights: None, separation: 0.0 };
        let (data, _) = simulate(&cfg, 1).unwrap();
        // All responsibility on component 0; component 1 keeps ~0 mass.
        let resp = vec![vec![1.0, 0.0]; 40];
        let problem = GmmProblem::new(
            data,
            2,
            GmmPriors::default(),
            GmmInit::Responsibilities(resp),
        )
        .unwrap();
        let mut state = problem.initial_state().unwrap();
        match problem.update_factor(&mut state, 2 + 1) {
            Err(Error::Domain(msg)) => assert!(msg.contains("degenerated"), "{msg}"),
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn kmeans_seeding_fits_without_truth() {
        let cfg = GmmConfig { n: 300, num_components: 2, dim: 2, weights: None, separation: 5.0 };
        let (data, truth) = simulate(&cfg, 29).unwrap();
        let problem =
            GmmProblem::new(data, 2, GmmPriors::default(), GmmInit::KMeans { seed: 5 }).unwrap();
        let opts = FitOptions { tol: 1e-9, ..Default::default() };
        let (state, trace) =
            coordinate_ascent(&problem, problem.initial_state().unwrap(), &opts).unwrap();
        assert!(trace.converged);
        let means = problem.component_means(&state.m);
        let order = component_order(&means);
        let tm: Vec<DVector<f64>> =
            truth.means.iter().map(|v| DVector::from_column_slice(v)).collect();
        let torder = component_order(&tm);
        for (i, &k) in order.iter().enumerate() {
            assert!((&means[k] - &tm[torder[i]]).amax() < 0.4);
        }
    }

    #[test]
    fn scaling_run_produces_timings() {
        let cells = [
            ScalingCell { n: 400, num_components: 2, dim: 2 },
            ScalingCell { n: 800, num_components: 2, dim: 2 },
        ];
        let rows = scaling_run(&cells, 2, 17).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.seconds >= 0.0 && r.seconds.is_finite()));
        assert!(rows.iter().any(|r| r.phase == "h_schur_products"));
        assert!(rows.iter().any(|r| r.phase == "alpha_solve"));
    }
}
