//! Shared machinery behind the subcommands: build a model from the config
//! (simulating or loading its dataset), fit and correct it, run the matching
//! sampler, and assemble comparison tables.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::Result;
use nalgebra::DMatrix;
use rayon::prelude::*;

use lrvb_core::artifacts::{
    ChainSummaryArtifact, ComparisonArtifact, ComparisonRow, CovariancePair, FitArtifact,
    LrvbArtifact, MatrixData,
};
use lrvb_core::engine::{assemble_v, lrvb_schur, LrvbOptions, LrvbResult};
use lrvb_core::layout::BlockLayout;
use lrvb_core::models::{gmm, normal_poisson as np, random_effects as re};
use lrvb_core::optimizer::{coordinate_ascent_partial, FitTrace, ModelProblem, VariationalState};
use lrvb_core::oracle::{gmm_gibbs, np_mh, re_gibbs, ChainDraws, ChainSummary};
use lrvb_core::Error;

use crate::config::{chain_seed, FitSection, GmmInitKind, McmcSection, RunConfig, ScalingSection};
use crate::io;

/// A model with its dataset in place, ready to fit or sample.
pub enum PreparedModel {
    NormalPoisson(np::NpProblem),
    RandomEffects(re::ReProblem),
    Gmm(gmm::GmmProblem),
}

/// Builds the problem named by the config. `sim_seed` drives the simulation
/// (and the k-means initialization for the mixture); it is unused when the
/// config points at a dataset file.
pub fn prepare(config: &RunConfig, sim_seed: u64) -> Result<PreparedModel> {
    match config {
        RunConfig::NormalPoisson { sim, dataset, priors, .. } => {
            let data = match dataset {
                Some(path) => io::read_np_csv(path)?,
                None => np::simulate(sim.n, sim.beta, sim.tau, sim_seed)?.0,
            };
            Ok(PreparedModel::NormalPoisson(np::NpProblem::new(data, *priors)?))
        }
        RunConfig::RandomEffects { sim, dataset, priors, .. } => {
            let data = match dataset {
                Some(path) => io::read_re_csv(path)?,
                None => re::simulate(sim.n, sim.num_groups, &sim.beta, sim.tau, sim.nu, sim_seed)?.0,
            };
            Ok(PreparedModel::RandomEffects(re::ReProblem::new(data, *priors)?))
        }
        RunConfig::Gmm { sim, dataset, priors, init, .. } => {
            let (data, truth) = match dataset {
                Some(path) => (io::read_gmm_csv(path)?, None),
                None => {
                    let (data, truth) = gmm::simulate(sim, sim_seed)?;
                    (data, Some(truth))
                }
            };
            let init = match init {
                GmmInitKind::KMeans => gmm::GmmInit::KMeans { seed: sim_seed },
                GmmInitKind::Truth => {
                    let truth = truth.as_ref().ok_or_else(|| {
                        Error::Config(
                            "truth initialization requires in-process simulation, not a dataset file"
                                .into(),
                        )
                    })?;
                    gmm::GmmInit::Responsibilities(gmm::truth_responsibilities(&data, truth))
                }
            };
            Ok(PreparedModel::Gmm(gmm::GmmProblem::new(
                data,
                sim.num_components,
                *priors,
                init,
            )?))
        }
    }
}

/// Fit output: the state is present even when the sweep budget ran out; the
/// correction is computed only for converged fits (and only on request).
pub struct FittedModel {
    pub state: VariationalState,
    pub trace: FitTrace,
    pub lrvb: Option<LrvbResult>,
    pub timings: BTreeMap<String, f64>,
}

pub fn fit_model(problem: &dyn ModelProblem, fit: &FitSection, correct: bool) -> Result<FittedModel> {
    let opts = fit.to_options();
    let t0 = Instant::now();
    let (state, trace) = coordinate_ascent_partial(problem, problem.initial_state()?, &opts)?;
    let mut timings = BTreeMap::new();
    timings.insert("fit_seconds".to_string(), t0.elapsed().as_secs_f64());

    let lrvb = if trace.converged && correct {
        let t1 = Instant::now();
        let v = assemble_v(&state.factors(problem.layout()), problem.layout())?;
        let h = problem.hessian(&state.m)?;
        let result = lrvb_schur(&v, &h, problem.z_solver(), &LrvbOptions::default())?;
        timings.insert("lrvb_seconds".to_string(), t1.elapsed().as_secs_f64());
        Some(result)
    } else {
        None
    };
    Ok(FittedModel { state, trace, lrvb, timings })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl PreparedModel {
    pub fn problem(&self) -> &dyn ModelProblem {
        match self {
            Self::NormalPoisson(p) => p,
            Self::RandomEffects(p) => p,
            Self::Gmm(p) => p,
        }
    }

    /// Runs the model's sampler. The mixture chain starts at the variational
    /// solution so both sides share one component labeling; when no fitted
    /// state is supplied, a fit is run here just for that initialization.
    pub fn run_chain(
        &self,
        fit: &FitSection,
        mcmc: &McmcSection,
        seed: u64,
        vb: Option<&VariationalState>,
    ) -> Result<(ChainDraws, BTreeMap<String, f64>)> {
        let mut timings = BTreeMap::new();
        let draws = match self {
            Self::NormalPoisson(p) => {
                let opts = np_mh::NpMhOptions {
                    iterations: mcmc.iterations,
                    burn_in: mcmc.burn_in,
                    track_z: mcmc.track_z.clone(),
                    ..Default::default()
                };
                let t0 = Instant::now();
                let draws = np_mh::run(p.data(), p.priors(), &opts, seed)?;
                timings.insert("chain_seconds".to_string(), t0.elapsed().as_secs_f64());
                draws
            }
            Self::RandomEffects(p) => {
                let opts = re_gibbs::ReGibbsOptions {
                    iterations: mcmc.iterations,
                    burn_in: mcmc.burn_in,
                    track_z: mcmc.track_z.clone(),
                };
                let t0 = Instant::now();
                let draws = re_gibbs::run(p.data(), p.priors(), &opts, seed)?;
                timings.insert("chain_seconds".to_string(), t0.elapsed().as_secs_f64());
                draws
            }
            Self::Gmm(p) => {
                let owned;
                let state = match vb {
                    Some(state) => state,
                    None => {
                        let t0 = Instant::now();
                        let fitted = fit_model(p, fit, false)?;
                        if !fitted.trace.converged {
                            let last =
                                fitted.trace.max_change.last().copied().unwrap_or(f64::NAN);
                            return Err(Error::MaxSweepsExceeded(fit.max_sweeps, last).into());
                        }
                        timings
                            .insert("init_fit_seconds".to_string(), t0.elapsed().as_secs_f64());
                        owned = fitted.state;
                        &owned
                    }
                };
                let means: Vec<Vec<f64>> = p
                    .component_means(&state.m)
                    .iter()
                    .map(|m| m.iter().copied().collect())
                    .collect();
                let logits: Vec<f64> =
                    (0..p.num_components()).map(|j| state.m[p.pi_offset() + j]).collect();
                let weights = softmax(&logits);
                let opts = gmm_gibbs::GmmGibbsOptions {
                    iterations: mcmc.iterations,
                    burn_in: mcmc.burn_in,
                };
                let t0 = Instant::now();
                let draws = gmm_gibbs::run(p.data(), p.priors(), &means, &weights, &opts, seed)?;
                timings.insert("chain_seconds".to_string(), t0.elapsed().as_secs_f64());
                draws
            }
        };
        Ok((draws, timings))
    }

    /// True iff this model's sampler runs a label-switching check.
    pub fn has_label_check(&self) -> bool {
        matches!(self, Self::Gmm(_))
    }
}

pub fn fit_artifact(
    model: &str,
    hash: &str,
    seed: u64,
    problem: &dyn ModelProblem,
    fitted: &FittedModel,
) -> Result<FitArtifact> {
    let mut artifact =
        FitArtifact::new(model, hash, seed, problem.layout(), &fitted.state, &fitted.trace);
    if let Some(result) = &fitted.lrvb {
        artifact.lrvb = Some(LrvbArtifact::from_result(result, problem.layout())?);
    }
    artifact.timings = fitted.timings.clone();
    Ok(artifact)
}

pub fn chain_artifact(
    model: &str,
    hash: &str,
    summary: &ChainSummary,
    burn_in: usize,
    label_check_passed: bool,
    timings: BTreeMap<String, f64>,
) -> ChainSummaryArtifact {
    ChainSummaryArtifact {
        model: model.to_string(),
        config_hash: hash.to_string(),
        seed: summary.seed,
        draws: summary.draws,
        burn_in,
        names: summary.names.clone(),
        mean: summary.mean.clone(),
        sd: summary.sd.clone(),
        sd_se: summary.sd_se.clone(),
        ess: summary.ess.clone(),
        cov: MatrixData::from_matrix(&summary.cov),
        acceptance: summary.acceptance,
        label_check_passed,
        timings,
    }
}

/// Variational side of a comparison: statistic names with the mean-field and
/// corrected covariances over them.
pub struct VbView {
    pub stat_names: Vec<String>,
    pub mfvb: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl VbView {
    pub fn from_result(result: &LrvbResult, layout: &BlockLayout) -> Result<Self> {
        Self::from_artifact(&LrvbArtifact::from_result(result, layout)?)
    }

    pub fn from_artifact(artifact: &LrvbArtifact) -> Result<Self> {
        Ok(Self {
            stat_names: artifact.stat_names.clone(),
            mfvb: artifact.mfvb_cov.to_matrix()?,
            sigma: artifact.sigma_hat.to_matrix()?,
        })
    }
}

/// Sampler side of a comparison.
pub struct ChainView {
    pub names: Vec<String>,
    pub sd: Vec<f64>,
    pub sd_se: Vec<f64>,
    pub ess: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl ChainView {
    pub fn from_summary(summary: &ChainSummary) -> Self {
        Self {
            names: summary.names.clone(),
            sd: summary.sd.clone(),
            sd_se: summary.sd_se.clone(),
            ess: summary.ess.clone(),
            cov: summary.cov.clone(),
        }
    }

    pub fn from_artifact(artifact: &ChainSummaryArtifact) -> Result<Self> {
        Ok(Self {
            names: artifact.names.clone(),
            sd: artifact.sd.clone(),
            sd_se: artifact.sd_se.clone(),
            ess: artifact.ess.clone(),
            cov: artifact.cov.to_matrix()?,
        })
    }
}

/// Joins the two sides on shared statistic names: one row per matched scalar
/// plus a covariance triple per matched pair. Fails if nothing matches or if
/// any matched functional's effective sample size is below `min_ess`.
pub fn compare_views(
    model: &str,
    hash: &str,
    seed: u64,
    vb: &VbView,
    chain: &ChainView,
    min_ess: f64,
) -> Result<ComparisonArtifact> {
    let mut matched: Vec<(usize, usize)> = Vec::new();
    let mut rows = Vec::new();
    for (ci, name) in chain.names.iter().enumerate() {
        let Some(vi) = vb.stat_names.iter().position(|s| s == name) else {
            continue;
        };
        matched.push((ci, vi));
        rows.push(ComparisonRow {
            name: name.clone(),
            mfvb_sd: vb.mfvb[(vi, vi)].max(0.0).sqrt(),
            lrvb_sd: vb.sigma[(vi, vi)].max(0.0).sqrt(),
            mcmc_sd: chain.sd[ci],
            mcmc_se: chain.sd_se[ci],
            ess: chain.ess[ci],
        });
    }
    if rows.is_empty() {
        return Err(Error::LayoutMismatch(format!(
            "no shared statistic names between the fit ({}) and the chain ({})",
            vb.stat_names.join(", "),
            chain.names.join(", ")
        ))
        .into());
    }

    let worst_ess = rows.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min);
    if worst_ess < min_ess {
        let worst = rows
            .iter()
            .min_by(|a, b| a.ess.total_cmp(&b.ess))
            .expect("rows is non-empty");
        return Err(Error::EssTooLow(format!(
            "{} has ESS {:.1} < required {min_ess}",
            worst.name, worst.ess
        ))
        .into());
    }

    let mut pairs = Vec::new();
    for (i, &(ci, vi)) in matched.iter().enumerate() {
        for &(cj, vj) in matched.iter().skip(i + 1) {
            pairs.push(CovariancePair {
                name_a: chain.names[ci].clone(),
                name_b: chain.names[cj].clone(),
                mfvb_cov: vb.mfvb[(vi, vj)],
                lrvb_cov: vb.sigma[(vi, vj)],
                mcmc_cov: chain.cov[(ci, cj)],
            });
        }
    }

    let max_rel_sd_error = rows
        .iter()
        .map(|r| (r.lrvb_sd - r.mcmc_sd).abs() / r.mcmc_sd)
        .fold(0.0f64, f64::max);

    Ok(ComparisonArtifact {
        model: model.to_string(),
        config_hash: hash.to_string(),
        seed,
        rows,
        pairs,
        max_rel_sd_error,
        min_ess: worst_ess,
    })
}

/// Runs the full simulate -> fit -> sample -> compare pipeline for each
/// replicate in parallel. Replicate `r` simulates with `seed + r` and samples
/// with an independent stream derived from it.
pub fn compare_replicates(config: &RunConfig, hash: &str) -> Result<Vec<ComparisonArtifact>> {
    let section = config.compare();
    (0..section.replicates)
        .into_par_iter()
        .map(|rep| {
            let seed_rep = config.seed().wrapping_add(rep as u64);
            let prepared = prepare(config, seed_rep)?;
            let fitted = fit_model(prepared.problem(), config.fit(), true)?;
            let Some(result) = &fitted.lrvb else {
                let last = fitted.trace.max_change.last().copied().unwrap_or(f64::NAN);
                return Err(Error::MaxSweepsExceeded(config.fit().max_sweeps, last).into());
            };
            let (draws, _timings) =
                prepared.run_chain(config.fit(), config.mcmc(), chain_seed(seed_rep), Some(&fitted.state))?;
            let summary = draws.summarize()?;
            let vb = VbView::from_result(result, prepared.problem().layout())?;
            let chain = ChainView::from_summary(&summary);
            compare_views(config.model_id(), hash, seed_rep, &vb, &chain, section.min_ess)
        })
        .collect()
}

/// Timing rows for the grid: the two correction phases from the library's
/// harness plus `gibbs` rows that time `gibbs_iterations` sampler sweeps on
/// the same datasets.
pub fn scaling_with_gibbs(
    section: &ScalingSection,
    priors: &gmm::GmmPriors,
    seed: u64,
) -> Result<Vec<gmm::ScalingRow>> {
    let mut rows = gmm::scaling_run(&section.cells, section.reps, seed)?;
    for (ci, cell) in section.cells.iter().enumerate() {
        let cfg = gmm::GmmConfig {
            n: cell.n,
            num_components: cell.num_components,
            dim: cell.dim,
            weights: None,
            separation: 6.0,
        };
        let cell_seed = seed.wrapping_add(ci as u64);
        let (data, truth) = gmm::simulate(&cfg, cell_seed)?;
        let opts = gmm_gibbs::GmmGibbsOptions {
            iterations: section.gibbs_iterations,
            burn_in: 0,
        };
        for rep in 0..section.reps {
            let t0 = Instant::now();
            gmm_gibbs::run(
                &data,
                priors,
                &truth.means,
                &truth.weights,
                &opts,
                chain_seed(cell_seed).wrapping_add(rep as u64),
            )?;
            rows.push(gmm::ScalingRow {
                n: cell.n,
                num_components: cell.num_components,
                dim: cell.dim,
                rep,
                phase: "gibbs".to_string(),
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}
