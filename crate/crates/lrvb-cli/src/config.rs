//! Run configuration: one JSON document per experiment. The parsed document
//! is re-serialized canonically and hashed, and that hash is embedded in
//! every artifact the run produces, so outputs can always be traced back to
//! the exact settings (post any `--seed` override) that generated them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lrvb_core::models::{gmm, normal_poisson as np, random_effects as re};
use lrvb_core::{Error, FitOptions};

/// Coordinate-ascent settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    /// Convergence threshold on the per-sweep max scaled moment change.
    pub tol: f64,
    pub max_sweeps: usize,
    pub track_elbo: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 10_000, track_elbo: true }
    }
}

impl FitSection {
    pub fn to_options(&self) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            track_elbo: self.track_elbo,
            ..Default::default()
        }
    }
}

/// MCMC oracle settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSection {
    /// Retained draws after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    /// Latent sites/group effects to record alongside the global functionals
    /// (ignored by the mixture sampler).
    pub track_z: Vec<usize>,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self { iterations: 20_000, burn_in: 5_000, track_z: Vec::new() }
    }
}

/// Replicated-comparison settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSection {
    pub replicates: usize,
    /// Minimum effective sample size required of every compared functional.
    pub min_ess: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { replicates: 1, min_ess: 500.0 }
    }
}

/// How the mixture fit seeds its responsibilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmInitKind {
    /// K-means hard assignments, softened (works for file datasets too).
    #[serde(rename = "kmeans")]
    KMeans,
    /// Responsibilities under the generating parameters; only available when
    /// the dataset is simulated in-process.
    Truth,
}

/// Grid for the timing study (mixture model only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSection {
    pub cells: Vec<gmm::ScalingCell>,
    #[serde(default = "default_scaling_reps")]
    pub reps: usize,
    /// Gibbs sweeps timed per cell (timing only, no burn-in or summaries).
    #[serde(default = "default_gibbs_iterations")]
    pub gibbs_iterations: usize,
}

fn default_scaling_reps() -> usize {
    3
}

fn default_gibbs_iterations() -> usize {
    50
}

/// Simulation settings for the normal-Poisson model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpSim {
    pub n: usize,
    pub beta: f64,
    pub tau: f64,
}

/// Simulation settings for the random-effects regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReSim {
    pub n: usize,
    pub num_groups: usize,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub nu: f64,
}

/// One experiment: the model with its simulation and prior settings, plus
/// shared fit/oracle/comparison sections. When `dataset` is set it points at
/// a CSV written by `simulate` and takes precedence over fresh simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RunConfig {
    NormalPoisson {
        seed: u64,
        sim: NpSim,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default)]
        priors: np::NpPriors,
        #[serde(default)]
        fit: FitSection,
        #[serde(default)]
        mcmc: McmcSection,
        #[serde(default)]
        compare: CompareSection,
    },
    RandomEffects {
        seed: u64,
        sim: ReSim,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default)]
        priors: re::RePriors,
        #[serde(default)]
        fit: FitSection,
        #[serde(default)]
        mcmc: McmcSection,
        #[serde(default)]
        compare: CompareSection,
    },
    Gmm {
        seed: u64,
        sim: gmm::GmmConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default)]
        priors: gmm::GmmPriors,
        #[serde(default = "default_gmm_init")]
        init: GmmInitKind,
        #[serde(default)]
        fit: FitSection,
        #[serde(default)]
        mcmc: McmcSection,
        #[serde(default)]
        compare: CompareSection,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scaling: Option<ScalingSection>,
    },
}

fn default_gmm_init() -> GmmInitKind {
    GmmInitKind::KMeans
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn model_id(&self) -> &'static str {
        match self {
            Self::NormalPoisson { .. } => "normal_poisson",
            Self::RandomEffects { .. } => "random_effects",
            Self::Gmm { .. } => "gmm",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::NormalPoisson { seed, .. }
            | Self::RandomEffects { seed, .. }
            | Self::Gmm { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            Self::NormalPoisson { seed, .. }
            | Self::RandomEffects { seed, .. }
            | Self::Gmm { seed, .. } => *seed = value,
        }
    }

    pub fn dataset(&self) -> Option<&Path> {
        match self {
            Self::NormalPoisson { dataset, .. }
            | Self::RandomEffects { dataset, .. }
            | Self::Gmm { dataset, .. } => dataset.as_deref(),
        }
    }

    pub fn fit(&self) -> &FitSection {
        match self {
            Self::NormalPoisson { fit, .. }
            | Self::RandomEffects { fit, .. }
            | Self::Gmm { fit, .. } => fit,
        }
    }

    pub fn mcmc(&self) -> &McmcSection {
        match self {
            Self::NormalPoisson { mcmc, .. }
            | Self::RandomEffects { mcmc, .. }
            | Self::Gmm { mcmc, .. } => mcmc,
        }
    }

    pub fn compare(&self) -> &CompareSection {
        match self {
            Self::NormalPoisson { compare, .. }
            | Self::RandomEffects { compare, .. }
            | Self::Gmm { compare, .. } => compare,
        }
    }

    /// Cheap upfront checks; anything data-dependent is validated where the
    /// dataset is built or loaded.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> lrvb_core::Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        match self {
            Self::NormalPoisson { priors, fit, mcmc, compare, .. } => {
                priors.validate()?;
                check(fit.tol > 0.0 && fit.max_sweeps > 0, "fit.tol and fit.max_sweeps must be positive")?;
                check(mcmc.iterations > 0, "mcmc.iterations must be positive")?;
                check(compare.replicates > 0, "compare.replicates must be positive")?;
            }
            Self::RandomEffects { priors, fit, mcmc, compare, .. } => {
                priors.validate()?;
                check(fit.tol > 0.0 && fit.max_sweeps > 0, "fit.tol and fit.max_sweeps must be positive")?;
                check(mcmc.iterations > 0, "mcmc.iterations must be positive")?;
                check(compare.replicates > 0, "compare.replicates must be positive")?;
            }
            Self::Gmm { priors, fit, mcmc, compare, scaling, .. } => {
                priors.validate()?;
                check(fit.tol > 0.0 && fit.max_sweeps > 0, "fit.tol and fit.max_sweeps must be positive")?;
                check(mcmc.iterations > 0, "mcmc.iterations must be positive")?;
                check(compare.replicates > 0, "compare.replicates must be positive")?;
                if let Some(s) = scaling {
                    check(!s.cells.is_empty() && s.reps > 0, "scaling needs at least one cell and one rep")?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization (after any seed override),
    /// so the hash is insensitive to formatting but not to settings.
    pub fn hash(&self) -> Result<String> {
        hash_value(self)
    }
}

/// SHA-256 hex digest of a value's canonical JSON serialization.
pub fn hash_value<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_vec(value).context("serializing settings for hashing")?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Seed for a sampler paired with a simulation seeded by `seed`, so the two
/// never share a stream.
pub fn chain_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}
