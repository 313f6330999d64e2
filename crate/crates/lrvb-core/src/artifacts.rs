//! Serializable result schemas shared by the CLI and the test suites.
//!
//! Matrices serialize as `{rows, cols, data}` with row-major `data` so
//! downstream tooling can reshape them without guessing. Every top-level
//! artifact carries the config hash and seed that produced it; re-running the
//! same config reproduces every numeric payload byte-for-byte, with wall-clock
//! timings quarantined in their own field.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{LrvbResult, SigmaScope, SolveDiagnostics};
use crate::error::{Error, Result};
use crate::expfam::FactorFamily;
use crate::layout::{BlockLayout, Partition};
use crate::optimizer::{FitTrace, VariationalState};

/// Dense matrix payload, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix payload has {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// One fitted factor: identity, layout slot, and both parameterizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorArtifact {
    pub name: String,
    pub family: FactorFamily,
    pub partition: Partition,
    pub stat_names: Vec<String>,
    pub natural: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Linear-response output: the corrected covariance plus everything needed to
/// audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrvbArtifact {
    pub scope: SigmaScope,
    /// Names of the statistics indexing `sigma_hat` rows/columns.
    pub stat_names: Vec<String>,
    /// Uncorrected mean-field covariance over the same statistics.
    pub mfvb_cov: MatrixData,
    pub sigma_hat: MatrixData,
    pub diagnostics: SolveDiagnostics,
    /// `Cov(z, alpha)` when the Schur path was asked to recover it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_cross: Option<MatrixData>,
}

impl LrvbArtifact {
    /// Builds the artifact from an engine result, restricting the reported
    /// mean-field covariance to the solved scope.
    pub fn from_result(result: &LrvbResult, layout: &BlockLayout) -> Result<Self> {
        let stat_names = match result.scope {
            SigmaScope::Full => layout.stat_names(),
            SigmaScope::Alpha => layout.alpha_stat_names(),
        };
        let v_dense = result.v.to_dense();
        let mfvb = match result.scope {
            SigmaScope::Full => v_dense,
            SigmaScope::Alpha => {
                let a = layout.alpha_dim();
                v_dense.view((0, 0), (a, a)).into_owned()
            }
        };
        if mfvb.nrows() != result.sigma_hat.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "scope covers {} stats but sigma_hat has {} rows",
                mfvb.nrows(),
                result.sigma_hat.nrows()
            )));
        }
        Ok(Self {
            scope: result.scope,
            stat_names,
            mfvb_cov: MatrixData::from_matrix(&mfvb),
            sigma_hat: MatrixData::from_matrix(&result.sigma_hat),
            diagnostics: result.diagnostics.clone(),
            z_cross: result.z_cross.as_ref().map(MatrixData::from_matrix),
        })
    }
}

/// Full record of one mean-field fit (plus the optional covariance
/// correction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub converged: bool,
    pub sweeps: usize,
    pub elbo_trace: Vec<f64>,
    pub max_change_trace: Vec<f64>,
    pub alpha_dim: usize,
    pub z_dim: usize,
    pub factors: Vec<FactorArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lrvb: Option<LrvbArtifact>,
    /// Wall-clock seconds per phase; excluded from reproducibility checks.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

impl FitArtifact {
    pub fn new(
        model: &str,
        config_hash: &str,
        seed: u64,
        layout: &BlockLayout,
        state: &VariationalState,
        trace: &FitTrace,
    ) -> Self {
        let factors = layout
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, b)| FactorArtifact {
                name: b.name.clone(),
                family: b.family.clone(),
                partition: b.partition,
                stat_names: b.stat_names.clone(),
                natural: state.naturals[j].iter().copied().collect(),
                mean: state.mean_of(layout, j).iter().copied().collect(),
            })
            .collect();
        Self {
            model: model.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            converged: trace.converged,
            sweeps: trace.sweeps,
            elbo_trace: trace.elbo.clone(),
            max_change_trace: trace.max_change.clone(),
            alpha_dim: layout.alpha_dim(),
            z_dim: layout.z_dim(),
            factors,
            lrvb: None,
            timings: BTreeMap::new(),
        }
    }

    /// Copy with timing fields blanked, for byte-reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut c = self.clone();
        c.timings.clear();
        c
    }
}

/// Posterior summary of an MCMC oracle run over named scalar functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummaryArtifact {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub draws: usize,
    pub burn_in: usize,
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Monte Carlo standard error of each reported sd (batch estimate).
    pub sd_se: Vec<f64>,
    pub ess: Vec<f64>,
    /// Covariance of the tracked functionals.
    pub cov: MatrixData,
    /// Mean Metropolis acceptance rate, when the sampler has MH steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<f64>,
    /// True iff a label-switching check ran and found no switching.
    pub label_check_passed: bool,
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

/// One row of an MFVB/LRVB/MCMC standard-deviation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub mfvb_sd: f64,
    pub lrvb_sd: f64,
    pub mcmc_sd: f64,
    /// MC standard error of `mcmc_sd`.
    pub mcmc_se: f64,
    pub ess: f64,
}

/// Off-diagonal covariance triple for scatter comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariancePair {
    pub name_a: String,
    pub name_b: String,
    pub mfvb_cov: f64,
    pub lrvb_cov: f64,
    pub mcmc_cov: f64,
}

/// Comparison table plus headline gate numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonArtifact {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub pairs: Vec<CovariancePair>,
    /// max over rows of |lrvb_sd - mcmc_sd| / mcmc_sd.
    pub max_rel_sd_error: f64,
    pub min_ess: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let payload = MatrixData::from_matrix(&m);
        assert_eq!(payload.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(payload.to_matrix().unwrap(), m);
    }

    #[test]
    fn matrix_shape_mismatch_is_rejected() {
        let bad = MatrixData { rows: 2, cols: 2, data: vec![1.0, 2.0, 3.0] };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn fit_artifact_json_round_trip() {
        let art = FitArtifact {
            model: "mvn".into(),
            config_hash: "abc".into(),
            seed: 7,
            converged: true,
            sweeps: 3,
            elbo_trace: vec![-1.0, -0.5],
            max_change_trace: vec![0.1, 1e-12],
            alpha_dim: 2,
            z_dim: 0,
            factors: vec![],
            lrvb: None,
            timings: BTreeMap::from([("fit".to_string(), 0.25)]),
        };
        let json = serde_json::to_string(&art).unwrap();
        let back: FitArtifact = serde_json::from_str(&json).unwrap();
        assert_eq!(back, art);
        assert!(back.without_timings().timings.is_empty());
    }
}
