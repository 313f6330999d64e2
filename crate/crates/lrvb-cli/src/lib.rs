//! Command-line harness: simulate datasets, fit the mean-field approximation,
//! apply the linear-response covariance correction, run the matching MCMC
//! sampler, and emit plot-ready comparison and timing tables.
//!
//! Configs and results are JSON; datasets and tables are CSV. Every output
//! embeds the SHA-256 of the effective config plus the seed, and re-running a
//! config reproduces every numeric payload byte-for-byte (timing fields
//! excepted).

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use lrvb_core::models::{gmm, mvn, normal_poisson as np, random_effects as re};
use lrvb_core::Error;

pub mod config;
pub mod io;
pub mod pipeline;

use config::{chain_seed, RunConfig};
use io::{NpTruth, TruthArtifact};
use pipeline::{
    chain_artifact, compare_replicates, compare_views, fit_artifact, fit_model, prepare,
    scaling_with_gibbs, ChainView, VbView,
};

/// Everything worked.
pub const EXIT_OK: u8 = 0;
/// An optimizer or linear-response solve failed (no convergence, singular or
/// indefinite system, numeric breakdown), or a certification gate failed.
pub const EXIT_CONVERGENCE: u8 = 10;
/// An oracle quality gate failed: effective sample size too low, label
/// switching detected, or too few draws to summarize.
pub const EXIT_ORACLE_GATE: u8 = 11;
/// The configuration or an artifact's contents are invalid.
pub const EXIT_CONFIG: u8 = 12;
/// A file could not be read or written.
pub const EXIT_IO: u8 = 13;

#[derive(Debug, Parser)]
#[command(
    name = "lrvb",
    version,
    about = "Mean-field variational fits with linear-response covariance corrections"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory artifacts are written into (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for replicated runs (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from the config's generative model; writes dataset.csv
    /// and truth.json.
    Simulate,
    /// Fit the mean-field approximation and apply the covariance correction;
    /// writes fit.json. Exits nonzero (without a correction) if the fit does
    /// not converge.
    Fit,
    /// Run the model's MCMC sampler and summarize it; writes mcmc.json.
    Mcmc,
    /// Fit and sample over replicates, joining the two on shared statistic
    /// names; writes comparison.csv, pairs.csv, and comparison.json.
    Compare {
        /// Compare an existing fit artifact instead of running the pipeline.
        #[arg(long, requires = "chain")]
        fit: Option<PathBuf>,
        /// Chain summary artifact paired with --fit.
        #[arg(long, requires = "fit")]
        chain: Option<PathBuf>,
    },
    /// Time the correction phases and Gibbs sweeps over the config's scaling
    /// grid (mixture model only); writes scaling.csv.
    Scaling,
    /// Fit random multivariate-normal targets, where the corrected covariance
    /// is exact, and fail unless worst-case errors stay within tight bounds;
    /// optionally writes certify.csv.
    CertifyMvn {
        /// Target dimensions, cycled through across repetitions.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 4, 5, 6])]
        dim: Vec<usize>,
        /// Number of random targets.
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
}

/// Parses arguments, runs, and turns errors into the exit codes above.
pub fn main_impl() -> u8 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        // Ignore the error: the pool can only be built once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&cli),
        Command::Fit => cmd_fit(&cli),
        Command::Mcmc => cmd_mcmc(&cli),
        Command::Compare { fit, chain } => match (fit, chain) {
            (Some(fit), Some(chain)) => cmd_compare_files(&cli, fit, chain),
            _ => cmd_compare_pipeline(&cli),
        },
        Command::Scaling => cmd_scaling(&cli),
        Command::CertifyMvn { dim, reps } => cmd_certify_mvn(&cli, dim, *reps),
    }
}

/// Maps the root cause onto the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Domain(_)
                | Error::NoConvergence(_)
                | Error::MaxSweepsExceeded(..)
                | Error::SingularSystem(_)
                | Error::Numerical(_) => EXIT_CONVERGENCE,
                Error::EssTooLow(_) | Error::LabelSwitch(_) | Error::TooFewDraws(..) => {
                    EXIT_ORACLE_GATE
                }
                Error::Config(_)
                | Error::LayoutMismatch(_)
                | Error::DimensionMismatch(_)
                | Error::DimensionTooLarge(..) => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { EXIT_IO } else { EXIT_CONFIG };
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.classify() == serde_json::error::Category::Io {
                EXIT_IO
            } else {
                EXIT_CONFIG
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CONFIG
}

fn load_config(cli: &Cli) -> Result<(RunConfig, String)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required for this command"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    config.validate()?;
    let hash = config.hash()?;
    Ok((config, hash))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| anyhow!("--out is required for this command"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn cmd_simulate(cli: &Cli) -> Result<()> {
    let (config, hash) = load_config(cli)?;
    let out = out_dir(cli)?;
    let seed = config.seed();
    let dataset_path = out.join("dataset.csv");
    let truth_path = out.join("truth.json");
    let model = config.model_id().to_string();
    let rows = match &config {
        RunConfig::NormalPoisson { sim, .. } => {
            let (data, z) = np::simulate(sim.n, sim.beta, sim.tau, seed)?;
            io::write_np_csv(&dataset_path, &data, &hash, seed)?;
            let truth = NpTruth { beta: sim.beta, tau: sim.tau, z };
            io::write_json(&truth_path, &TruthArtifact { model, config_hash: hash, seed, truth })?;
            data.len()
        }
        RunConfig::RandomEffects { sim, .. } => {
            let (data, truth) =
                re::simulate(sim.n, sim.num_groups, &sim.beta, sim.tau, sim.nu, seed)?;
            io::write_re_csv(&dataset_path, &data, &hash, seed)?;
            io::write_json(&truth_path, &TruthArtifact { model, config_hash: hash, seed, truth })?;
            data.len()
        }
        RunConfig::Gmm { sim, .. } => {
            let (data, truth) = gmm::simulate(sim, seed)?;
            io::write_gmm_csv(&dataset_path, &data, &hash, seed)?;
            io::write_json(&truth_path, &TruthArtifact { model, config_hash: hash, seed, truth })?;
            data.len()
        }
    };
    println!(
        "simulate: {rows} rows -> {} (+ {})",
        dataset_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_fit(cli: &Cli) -> Result<()> {
    let (config, hash) = load_config(cli)?;
    let out = out_dir(cli)?;
    let seed = config.seed();
    let prepared = prepare(&config, seed)?;
    let fitted = fit_model(prepared.problem(), config.fit(), true)?;
    let artifact = fit_artifact(config.model_id(), &hash, seed, prepared.problem(), &fitted)?;
    let path = out.join("fit.json");
    io::write_json(&path, &artifact)?;
    println!(
        "fit: model={} converged={} sweeps={} -> {}",
        config.model_id(),
        fitted.trace.converged,
        fitted.trace.sweeps,
        path.display()
    );
    if !fitted.trace.converged {
        let last = fitted.trace.max_change.last().copied().unwrap_or(f64::NAN);
        return Err(Error::MaxSweepsExceeded(config.fit().max_sweeps, last).into());
    }
    Ok(())
}

fn cmd_mcmc(cli: &Cli) -> Result<()> {
    let (config, hash) = load_config(cli)?;
    let out = out_dir(cli)?;
    let seed = config.seed();
    let prepared = prepare(&config, seed)?;
    let (draws, timings) =
        prepared.run_chain(config.fit(), config.mcmc(), chain_seed(seed), None)?;
    let summary = draws.summarize()?;
    let artifact = chain_artifact(
        config.model_id(),
        &hash,
        &summary,
        config.mcmc().burn_in,
        prepared.has_label_check(),
        timings,
    );
    let path = out.join("mcmc.json");
    io::write_json(&path, &artifact)?;
    println!(
        "mcmc: model={} draws={} min_ess={:.0} -> {}",
        config.model_id(),
        summary.draws,
        summary.min_ess(),
        path.display()
    );
    Ok(())
}

fn write_comparison_tables(
    out: &PathBuf,
    hash: &str,
    seed: u64,
    artifacts: &[lrvb_core::artifacts::ComparisonArtifact],
) -> Result<()> {
    let mut rows = io::csv_writer(&out.join("comparison.csv"), hash, seed)?;
    rows.write_record(["rep", "name", "mfvb_sd", "lrvb_sd", "mcmc_sd", "mcmc_se", "ess"])?;
    for (rep, artifact) in artifacts.iter().enumerate() {
        for row in &artifact.rows {
            rows.write_record(&[
                rep.to_string(),
                row.name.clone(),
                row.mfvb_sd.to_string(),
                row.lrvb_sd.to_string(),
                row.mcmc_sd.to_string(),
                row.mcmc_se.to_string(),
                row.ess.to_string(),
            ])?;
        }
    }
    rows.flush()?;

    let mut pairs = io::csv_writer(&out.join("pairs.csv"), hash, seed)?;
    pairs.write_record(["rep", "name_a", "name_b", "mfvb_cov", "lrvb_cov", "mcmc_cov"])?;
    for (rep, artifact) in artifacts.iter().enumerate() {
        for pair in &artifact.pairs {
            pairs.write_record(&[
                rep.to_string(),
                pair.name_a.clone(),
                pair.name_b.clone(),
                pair.mfvb_cov.to_string(),
                pair.lrvb_cov.to_string(),
                pair.mcmc_cov.to_string(),
            ])?;
        }
    }
    pairs.flush()?;

    io::write_json(&out.join("comparison.json"), &artifacts)?;
    Ok(())
}

fn cmd_compare_pipeline(cli: &Cli) -> Result<()> {
    let (config, hash) = load_config(cli)?;
    let out = out_dir(cli)?;
    let artifacts = compare_replicates(&config, &hash)?;
    write_comparison_tables(&out, &hash, config.seed(), &artifacts)?;
    let worst = artifacts.iter().map(|a| a.max_rel_sd_error).fold(0.0f64, f64::max);
    let min_ess = artifacts.iter().map(|a| a.min_ess).fold(f64::INFINITY, f64::min);
    println!(
        "compare: model={} replicates={} max |lrvb-mcmc|/mcmc={:.4} min_ess={:.0} -> {}",
        config.model_id(),
        artifacts.len(),
        worst,
        min_ess,
        out.join("comparison.csv").display()
    );
    Ok(())
}

fn cmd_compare_files(cli: &Cli, fit_path: &PathBuf, chain_path: &PathBuf) -> Result<()> {
    let out = out_dir(cli)?;
    let fit: lrvb_core::artifacts::FitArtifact = io::read_json(fit_path)?;
    let chain: lrvb_core::artifacts::ChainSummaryArtifact = io::read_json(chain_path)?;
    if fit.model != chain.model {
        return Err(Error::LayoutMismatch(format!(
            "fit artifact is for model {:?}, chain for {:?}",
            fit.model, chain.model
        ))
        .into());
    }
    if fit.model == "gmm" && !chain.label_check_passed {
        return Err(Error::LabelSwitch("chain artifact's label check did not pass".into()).into());
    }
    let lrvb = fit.lrvb.as_ref().ok_or_else(|| {
        Error::Config("fit artifact carries no covariance correction to compare".into())
    })?;
    let min_ess = match &cli.config {
        Some(_) => load_config(cli)?.0.compare().min_ess,
        None => config::CompareSection::default().min_ess,
    };
    let artifact = compare_views(
        &fit.model,
        &fit.config_hash,
        fit.seed,
        &VbView::from_artifact(lrvb)?,
        &ChainView::from_artifact(&chain)?,
        min_ess,
    )?;
    write_comparison_tables(&out, &fit.config_hash, fit.seed, std::slice::from_ref(&artifact))?;
    println!(
        "compare: model={} rows={} max |lrvb-mcmc|/mcmc={:.4} min_ess={:.0} -> {}",
        fit.model,
        artifact.rows.len(),
        artifact.max_rel_sd_error,
        artifact.min_ess,
        out.join("comparison.csv").display()
    );
    Ok(())
}

fn cmd_scaling(cli: &Cli) -> Result<()> {
    let (config, hash) = load_config(cli)?;
    let out = out_dir(cli)?;
    let seed = config.seed();
    let RunConfig::Gmm { scaling: Some(section), priors, .. } = &config else {
        return Err(Error::Config(
            "scaling requires a gmm config with a scaling section".into(),
        )
        .into());
    };
    let rows = scaling_with_gibbs(section, priors, seed)?;
    let path = out.join("scaling.csv");
    let mut w = io::csv_writer(&path, &hash, seed)?;
    w.write_record(["N", "K", "P", "rep", "phase", "seconds"])?;
    for row in &rows {
        w.write_record(&[
            row.n.to_string(),
            row.num_components.to_string(),
            row.dim.to_string(),
            row.rep.to_string(),
            row.phase.clone(),
            row.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "scaling: {} timing rows over {} cells -> {}",
        rows.len(),
        section.cells.len(),
        path.display()
    );
    Ok(())
}

/// Parameters of a certification run, hashed for provenance like a config.
#[derive(Serialize)]
struct CertifySettings<'a> {
    dims: &'a [usize],
    reps: usize,
    seed: u64,
}

const MVN_MEAN_TOL: f64 = 1e-9;
const MVN_COV_TOL: f64 = 1e-8;

fn cmd_certify_mvn(cli: &Cli, dims: &[usize], reps: usize) -> Result<()> {
    let seed = cli.seed.unwrap_or(1);
    let cases = mvn::certify(dims, reps, seed)?;
    let max_mean = cases.iter().map(|c| c.mean_error).fold(0.0f64, f64::max);
    let max_cov = cases.iter().map(|c| c.cov_rel_error).fold(0.0f64, f64::max);

    if let Some(out) = &cli.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let hash = config::hash_value(&CertifySettings { dims, reps, seed })?;
        let path = out.join("certify.csv");
        let mut w = io::csv_writer(&path, &hash, seed)?;
        w.write_record(["dim", "condition_number", "mean_error", "cov_rel_error", "sweeps"])?;
        for case in &cases {
            w.write_record(&[
                case.dim.to_string(),
                case.condition_number.to_string(),
                case.mean_error.to_string(),
                case.cov_rel_error.to_string(),
                case.sweeps.to_string(),
            ])?;
        }
        w.flush()?;
    }

    println!(
        "certify-mvn: {} cases, max mean error {:.3e} (tol {MVN_MEAN_TOL:.0e}), max covariance rel error {:.3e} (tol {MVN_COV_TOL:.0e})",
        cases.len(),
        max_mean,
        max_cov
    );
    if max_mean > MVN_MEAN_TOL || max_cov > MVN_COV_TOL {
        return Err(Error::Numerical(format!(
            "certification failed: mean error {max_mean:.3e} (tol {MVN_MEAN_TOL:.0e}), covariance rel error {max_cov:.3e} (tol {MVN_COV_TOL:.0e})"
        ))
        .into());
    }
    Ok(())
}
