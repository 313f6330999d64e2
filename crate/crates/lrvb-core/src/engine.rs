//! Linear-response covariance solves.
//!
//! At a mean-field optimum `m*` with per-factor sufficient-statistic
//! covariance `V` (block diagonal) and `H = d^2 E_q[log p]/dm dm^T`, the
//! corrected posterior covariance solves
//!
//! ```text
//! (I - V H) sigma_hat = V.
//! ```
//!
//! [`lrvb_full`] solves the whole system densely with a pivoted LU (never by
//! inverting `V`, so singular multinoulli blocks are fine). [`lrvb_schur`]
//! returns only the alpha block by eliminating the z partition:
//!
//! ```text
//! sigma_a = (I_a - Va Haa - Va Haz (I_z - Vz Hz)^-1 Vz Hza)^-1 Va,
//! ```
//!
//! where the inner solve exploits the model-declared z-z structure (zero,
//! independent per-factor blocks, or dense fallback), keeping the cost linear
//! in the number of z factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::FactorState;
use crate::layout::BlockLayout;
use crate::linalg::BlockDiag;

/// Structure of the z-z block of the Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum ZzBlock {
    /// Identically zero (conjugate models).
    Zero,
    /// One small square block per z factor, in layout order.
    FactorBlocks(Vec<DMatrix<f64>>),
    /// Arbitrary dense coupling.
    Dense(DMatrix<f64>),
}

/// Strategy for the inner `(I_z - Vz Hz)` solve in [`lrvb_schur`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZSolverKind {
    /// `Hz = 0`: the inner system is the identity.
    Identity,
    /// Independent per-factor blocks solved one small LU at a time.
    FactorBlocks,
    /// Dense LU on the whole z partition.
    Dense,
}

/// Hessian of the expected log posterior, stored with its natural sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    alpha_dim: usize,
    z_dim: usize,
    /// Alpha-alpha block, symmetric, `alpha_dim x alpha_dim`.
    pub aa: DMatrix<f64>,
    /// Alpha-z block, `alpha_dim x z_dim`; the z-alpha block is its transpose.
    pub az: DMatrix<f64>,
    /// Structured z-z block.
    pub zz: ZzBlock,
}

impl HessianMatrix {
    pub fn new(aa: DMatrix<f64>, az: DMatrix<f64>, zz: ZzBlock) -> Result<Self> {
        let alpha_dim = aa.nrows();
        if aa.ncols() != alpha_dim {
            return Err(Error::DimensionMismatch("H alpha block must be square".into()));
        }
        if az.nrows() != alpha_dim {
            return Err(Error::DimensionMismatch(format!(
                "H az block has {} rows, expected {alpha_dim}",
                az.nrows()
            )));
        }
        let z_dim = az.ncols();
        let zz_dim = match &zz {
            ZzBlock::Zero => z_dim,
            ZzBlock::FactorBlocks(blocks) => blocks.iter().map(|b| b.nrows()).sum(),
            ZzBlock::Dense(d) => {
                if d.nrows() != d.ncols() {
                    return Err(Error::DimensionMismatch("H zz block must be square".into()));
                }
                d.nrows()
            }
        };
        if zz_dim != z_dim {
            return Err(Error::DimensionMismatch(format!(
                "H zz dimension {zz_dim} does not match az width {z_dim}"
            )));
        }
        Ok(Self { alpha_dim, z_dim, aa, az, zz })
    }

    /// An all-alpha Hessian (no z partition).
    pub fn alpha_only(aa: DMatrix<f64>) -> Result<Self> {
        let n = aa.nrows();
        Self::new(aa, DMatrix::zeros(n, 0), ZzBlock::Zero)
    }

    pub fn alpha_dim(&self) -> usize {
        self.alpha_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn total_dim(&self) -> usize {
        self.alpha_dim + self.z_dim
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.total_dim();
        let a = self.alpha_dim;
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (a, a)).copy_from(&self.aa);
        out.view_mut((0, a), (a, self.z_dim)).copy_from(&self.az);
        out.view_mut((a, 0), (self.z_dim, a)).copy_from(&self.az.transpose());
        match &self.zz {
            ZzBlock::Zero => {}
            ZzBlock::FactorBlocks(blocks) => {
                let mut off = a;
                for b in blocks {
                    out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
                    off += b.nrows();
                }
            }
            ZzBlock::Dense(d) => {
                out.view_mut((a, a), (self.z_dim, self.z_dim)).copy_from(d);
            }
        }
        out
    }

    /// Splits a dense symmetric Hessian into the structured form; used mainly
    /// by tests and the finite-difference cross-checks.
    pub fn from_dense(
        dense: &DMatrix<f64>,
        alpha_dim: usize,
        z_block_sizes: &[usize],
    ) -> Result<Self> {
        let n = dense.nrows();
        if dense.ncols() != n || alpha_dim > n {
            return Err(Error::DimensionMismatch("bad dense Hessian shape".into()));
        }
        let z_dim = n - alpha_dim;
        if z_block_sizes.iter().sum::<usize>() != z_dim {
            return Err(Error::LayoutMismatch("z block sizes do not cover z partition".into()));
        }
        let aa = dense.view((0, 0), (alpha_dim, alpha_dim)).into_owned();
        let az = dense.view((0, alpha_dim), (alpha_dim, z_dim)).into_owned();
        let zz_dense = dense.view((alpha_dim, alpha_dim), (z_dim, z_dim)).into_owned();
        let zz = if zz_dense.amax() == 0.0 {
            ZzBlock::Zero
        } else {
            let mut blocks = Vec::with_capacity(z_block_sizes.len());
            let mut off = 0;
            let mut block_diagonal = true;
            for &s in z_block_sizes {
                blocks.push(zz_dense.view((off, off), (s, s)).into_owned());
                off += s;
            }
            // Detect off-block mass; fall back to dense if present.
            let mut rebuilt = DMatrix::zeros(z_dim, z_dim);
            let mut off2 = 0;
            for b in &blocks {
                rebuilt.view_mut((off2, off2), (b.nrows(), b.ncols())).copy_from(b);
                off2 += b.nrows();
            }
            if (&zz_dense - &rebuilt).amax() > 0.0 {
                block_diagonal = false;
            }
            if block_diagonal {
                ZzBlock::FactorBlocks(blocks)
            } else {
                ZzBlock::Dense(zz_dense)
            }
        };
        Self::new(aa, az, zz)
    }

    /// Max-abs asymmetry of the dense representation (should be ~0).
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.to_dense();
        (&d - &d.transpose()).amax()
    }
}

/// Numerical diagnostics of a linear-response solve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveDiagnostics {
    /// `max_abs(A X - V) / max_abs(V)` after the LU solve.
    pub residual: f64,
    /// `max_abs(X - X^T) / max_abs(V)` before symmetrization.
    pub asymmetry: f64,
    /// Smallest eigenvalue of the symmetrized solution, when probed.
    pub min_eigenvalue: Option<f64>,
}

impl SolveDiagnostics {
    /// A meaningfully negative eigenvalue signals an unreliable correction.
    pub fn significantly_indefinite(&self) -> bool {
        matches!(self.min_eigenvalue, Some(e) if e < -1e-8)
    }
}

/// Which statistics the returned covariance covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScope {
    Full,
    Alpha,
}

/// Result of a linear-response solve.
#[derive(Debug, Clone)]
pub struct LrvbResult {
    /// Corrected covariance over the statistics in `scope`.
    pub sigma_hat: DMatrix<f64>,
    pub scope: SigmaScope,
    /// The sufficient-statistic covariance used.
    pub v: BlockDiag,
    /// The Hessian used.
    pub h: HessianMatrix,
    pub diagnostics: SolveDiagnostics,
    /// Cross-covariance `Cov(z, alpha)` (`z_dim x alpha_dim`), populated by
    /// the Schur path on request.
    pub z_cross: Option<DMatrix<f64>>,
}

/// Options for the linear-response solves.
#[derive(Debug, Clone)]
pub struct LrvbOptions {
    /// Relative residual above which the system is declared singular.
    pub residual_tol: f64,
    /// Relative asymmetry above which the solve is rejected (an asymmetric
    /// solution indicates the fit is not actually at a fixed point).
    pub asymmetry_tol: f64,
    /// Probe the smallest eigenvalue of the corrected covariance.
    pub check_pd: bool,
    /// Have [`lrvb_schur`] also return `Cov(z, alpha)`.
    pub with_z_cross: bool,
}

impl Default for LrvbOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-6, asymmetry_tol: 1e-6, check_pd: false, with_z_cross: false }
    }
}

/// Stacks per-factor sufficient-statistic covariances into block-diagonal `V`.
pub fn assemble_v(factors: &[FactorState], layout: &BlockLayout) -> Result<BlockDiag> {
    if factors.len() != layout.num_factors() {
        return Err(Error::LayoutMismatch(format!(
            "{} factors for a layout with {}",
            factors.len(),
            layout.num_factors()
        )));
    }
    let mut blocks = Vec::with_capacity(factors.len());
    for (f, b) in factors.iter().zip(layout.blocks()) {
        if f.family != b.family {
            return Err(Error::LayoutMismatch(format!(
                "factor '{}' family {:?} does not match layout family {:?}",
                b.name, f.family, b.family
            )));
        }
        blocks.push(f.covariance_block()?);
    }
    BlockDiag::new(blocks)
}

fn finish_solve(
    a: &DMatrix<f64>,
    x: DMatrix<f64>,
    v_dense: &DMatrix<f64>,
    opts: &LrvbOptions,
) -> Result<(DMatrix<f64>, SolveDiagnostics)> {
    let scale = v_dense.amax().max(1e-300);
    let residual = (a * &x - v_dense).amax() / scale;
    if !residual.is_finite() || residual > opts.residual_tol {
        return Err(Error::SingularSystem(format!(
            "relative residual {residual:.3e} exceeds {:.1e}",
            opts.residual_tol
        )));
    }
    let asymmetry = (&x - x.transpose()).amax() / scale;
    if asymmetry > opts.asymmetry_tol {
        return Err(Error::Numerical(format!(
            "solution asymmetry {asymmetry:.3e} exceeds {:.1e}; \
             is the mean-field fit converged?",
            opts.asymmetry_tol
        )));
    }
    let sigma = 0.5 * (&x + x.transpose());
    let min_eigenvalue = if opts.check_pd {
        Some(sigma.symmetric_eigenvalues().min())
    } else {
        None
    };
    Ok((sigma, SolveDiagnostics { residual, asymmetry, min_eigenvalue }))
}

/// Dense solve of `(I - V H) sigma = V` over all statistics.
pub fn lrvb_full(v: &BlockDiag, h: &HessianMatrix, opts: &LrvbOptions) -> Result<LrvbResult> {
    let n = v.dim();
    if n != h.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "V dimension {n} vs H dimension {}",
            h.total_dim()
        )));
    }
    let v_dense = v.to_dense();
    let h_dense = h.to_dense();
    let a = DMatrix::identity(n, n) - &v_dense * &h_dense;
    let x = a
        .clone()
        .lu()
        .solve(&v_dense)
        .ok_or_else(|| Error::SingularSystem("(I - VH) is singular".into()))?;
    let (sigma_hat, diagnostics) = finish_solve(&a, x, &v_dense, opts)?;
    Ok(LrvbResult {
        sigma_hat,
        scope: SigmaScope::Full,
        v: v.clone(),
        h: h.clone(),
        diagnostics,
        z_cross: None,
    })
}

/// Intermediate products of the Schur reduction. Splitting the reduction
/// (block products, linear in the number of z factors) from the final
/// alpha-sized solve lets callers time the two phases separately.
#[derive(Debug, Clone)]
pub struct SchurSystem {
    /// `I_a - Va (Haa + Haz W)`.
    m: DMatrix<f64>,
    /// `W = (I_z - Vz Hz)^-1 Vz Hza`.
    w: DMatrix<f64>,
    va_dense: DMatrix<f64>,
}

/// Forms the reduced alpha system without solving it.
pub fn schur_reduce(
    v: &BlockDiag,
    h: &HessianMatrix,
    solver: ZSolverKind,
) -> Result<SchurSystem> {
    let a_dim = h.alpha_dim();
    let z_dim = h.z_dim();
    if v.dim() != h.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "V dimension {} vs H dimension {}",
            v.dim(),
            h.total_dim()
        )));
    }
    let (va, vz) = v.split(a_dim)?;

    // B = Vz Hza, then W = (I_z - Vz Hz)^-1 B.
    let b = vz.mul_dense(&h.az.transpose())?;
    let w = match (solver, &h.zz) {
        (ZSolverKind::Identity, ZzBlock::Zero) => b,
        (ZSolverKind::Identity, _) => {
            return Err(Error::LayoutMismatch(
                "identity z-solver requires a zero z-z Hessian block".into(),
            ))
        }
        (ZSolverKind::FactorBlocks, ZzBlock::Zero) => b,
        (ZSolverKind::FactorBlocks, ZzBlock::FactorBlocks(hz)) => {
            if hz.len() != vz.num_blocks() {
                return Err(Error::LayoutMismatch(format!(
                    "{} z Hessian blocks vs {} z covariance blocks",
                    hz.len(),
                    vz.num_blocks()
                )));
            }
            let mut w = b;
            for (i, hz_i) in hz.iter().enumerate() {
                let off = vz.offset(i);
                let s = hz_i.nrows();
                let vz_i = vz.block(i);
                if vz_i.nrows() != s {
                    return Err(Error::LayoutMismatch(format!(
                        "z block {i}: Hessian size {s} vs covariance size {}",
                        vz_i.nrows()
                    )));
                }
                let m_i = DMatrix::identity(s, s) - vz_i * hz_i;
                let rhs = w.view((off, 0), (s, a_dim)).into_owned();
                let sol = m_i.lu().solve(&rhs).ok_or_else(|| {
                    Error::SingularSystem(format!("inner z block {i} is singular"))
                })?;
                w.view_mut((off, 0), (s, a_dim)).copy_from(&sol);
            }
            w
        }
        (ZSolverKind::FactorBlocks, ZzBlock::Dense(_)) => {
            return Err(Error::LayoutMismatch(
                "factor-block z-solver cannot handle a dense z-z Hessian".into(),
            ))
        }
        (ZSolverKind::Dense, zz) => {
            let hz_dense = match zz {
                ZzBlock::Zero => DMatrix::zeros(z_dim, z_dim),
                ZzBlock::FactorBlocks(blocks) => {
                    let mut d = DMatrix::zeros(z_dim, z_dim);
                    let mut off = 0;
                    for blk in blocks {
                        d.view_mut((off, off), (blk.nrows(), blk.ncols())).copy_from(blk);
                        off += blk.nrows();
                    }
                    d
                }
                ZzBlock::Dense(d) => d.clone(),
            };
            let m = DMatrix::identity(z_dim, z_dim) - vz.mul_dense(&hz_dense)?;
            m.lu()
                .solve(&b)
                .ok_or_else(|| Error::SingularSystem("inner z system is singular".into()))?
        }
    };

    // M = I_a - Va (Haa + Haz W).
    let coupled = &h.aa + &h.az * &w;
    let m = DMatrix::identity(a_dim, a_dim) - va.mul_dense(&coupled)?;
    let va_dense = va.to_dense();
    Ok(SchurSystem { m, w, va_dense })
}

/// Solves the reduced system `M sigma_a = Va` from [`schur_reduce`].
pub fn schur_solve(
    sys: &SchurSystem,
    v: &BlockDiag,
    h: &HessianMatrix,
    opts: &LrvbOptions,
) -> Result<LrvbResult> {
    let x = sys
        .m
        .clone()
        .lu()
        .solve(&sys.va_dense)
        .ok_or_else(|| Error::SingularSystem("alpha Schur system is singular".into()))?;
    let (sigma_hat, diagnostics) = finish_solve(&sys.m, x, &sys.va_dense, opts)?;
    let z_cross = if opts.with_z_cross { Some(&sys.w * &sigma_hat) } else { None };
    Ok(LrvbResult {
        sigma_hat,
        scope: SigmaScope::Alpha,
        v: v.clone(),
        h: h.clone(),
        diagnostics,
        z_cross,
    })
}

/// Schur-complement solve returning the alpha block of the corrected
/// covariance (and optionally the z-alpha cross block).
pub fn lrvb_schur(
    v: &BlockDiag,
    h: &HessianMatrix,
    solver: ZSolverKind,
    opts: &LrvbOptions,
) -> Result<LrvbResult> {
    let sys = schur_reduce(v, h, solver)?;
    schur_solve(&sys, v, h, opts)
}

/// Covariance between every statistic and a scalar function of the
/// posterior: `Cov(theta, f) = sigma_hat * grad f`.
pub fn function_covariance(sigma_hat: &DMatrix<f64>, grad_f: &DVector<f64>) -> Result<DVector<f64>> {
    if grad_f.len() != sigma_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gradient length {} vs covariance dimension {}",
            grad_f.len(),
            sigma_hat.ncols()
        )));
    }
    Ok(sigma_hat * grad_f)
}

/// Covariance between two scalar functions: `grad g^T sigma_hat grad f`.
pub fn function_function_covariance(
    sigma_hat: &DMatrix<f64>,
    grad_g: &DVector<f64>,
    grad_f: &DVector<f64>,
) -> Result<f64> {
    let right = function_covariance(sigma_hat, grad_f)?;
    if grad_g.len() != right.len() {
        return Err(Error::DimensionMismatch("gradient lengths differ".into()));
    }
    Ok(grad_g.dot(&right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_hessian_returns_v() {
        let v = BlockDiag::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            DMatrix::from_row_slice(1, 1, &[3.0]),
        ])
        .unwrap();
        let h = HessianMatrix::alpha_only(DMatrix::zeros(3, 3)).unwrap();
        let r = lrvb_full(&v, &h, &LrvbOptions::default()).unwrap();
        assert_abs_diff_eq!(r.sigma_hat, v.to_dense(), epsilon = 1e-14);
        assert!(r.diagnostics.residual < 1e-14);
    }

    #[test]
    fn bivariate_normal_first_moments_are_exact() {
        // Unit marginals with correlation 0.5: mean-field variances are 0.75
        // and the correction restores the full covariance.
        let v = BlockDiag::new(vec![
            DMatrix::from_row_slice(1, 1, &[0.75]),
            DMatrix::from_row_slice(1, 1, &[0.75]),
        ])
        .unwrap();
        let h = HessianMatrix::alpha_only(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 2.0 / 3.0, 2.0 / 3.0, 0.0],
        ))
        .unwrap();
        let r = lrvb_full(&v, &h, &LrvbOptions::default()).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_abs_diff_eq!(r.sigma_hat, expect, epsilon = 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let v = BlockDiag::new(vec![DMatrix::identity(2, 2)]).unwrap();
        let h = HessianMatrix::alpha_only(DMatrix::identity(2, 2)).unwrap();
        match lrvb_full(&v, &h, &LrvbOptions::default()) {
            Err(Error::SingularSystem(_)) => {}
            other => panic!("expected SingularSystem, got {other:?}"),
        }
    }

    #[test]
    fn function_covariance_basis_vector() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let c = function_covariance(&sigma, &e1).unwrap();
        assert_abs_diff_eq!(c[0], 2.0);
        assert_abs_diff_eq!(c[1], 0.3);
        let zero = function_covariance(&sigma, &DVector::zeros(2)).unwrap();
        assert_abs_diff_eq!(zero.amax(), 0.0);
        let var = function_function_covariance(&sigma, &e1, &e1).unwrap();
        assert_abs_diff_eq!(var, 2.0);
    }
}
