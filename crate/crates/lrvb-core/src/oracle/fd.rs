//! Finite-difference derivatives for validating analytic gradients and
//! Hessians of the expected-log-posterior surface.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference gradient with per-coordinate steps `h_i = step * (1 + |x_i|)`.
pub fn fd_gradient<F>(f: &F, x: &DVector<f64>, step: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let d = x.len();
    let mut g = DVector::zeros(d);
    for i in 0..d {
        let h = step * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central second differences: diagonal entries from the three-point stencil,
/// mixed entries from the four-point stencil, then symmetrized.
///
/// If an evaluation rejects the probe point (a domain error at the boundary of
/// an admissible region), the step is shrunk by 10x once and the whole matrix
/// recomputed.
pub fn fd_hessian<F>(f: &F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    match fd_hessian_once(f, x, step) {
        Ok(h) => Ok(h),
        Err(Error::Domain(_)) => fd_hessian_once(f, x, step * 0.1),
        Err(e) => Err(e),
    }
}

fn fd_hessian_once<F>(f: &F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let d = x.len();
    let h: Vec<f64> = (0..d).map(|i| step * (1.0 + x[i].abs())).collect();
    let f0 = f(x)?;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h[i];
        xm[i] -= h[i];
        out[(i, i)] = (f(&xp)? - 2.0 * f0 + f(&xm)?) / (h[i] * h[i]);
        for j in (i + 1)..d {
            let mut xpp = x.clone();
            let mut xpm = x.clone();
            let mut xmp = x.clone();
            let mut xmm = x.clone();
            xpp[i] += h[i];
            xpp[j] += h[j];
            xpm[i] += h[i];
            xpm[j] -= h[j];
            xmp[i] -= h[i];
            xmp[j] += h[j];
            xmm[i] -= h[i];
            xmm[j] -= h[j];
            let mixed = (f(&xpp)? - f(&xpm)? - f(&xmp)? + f(&xmm)?) / (4.0 * h[i] * h[j]);
            out[(i, j)] = mixed;
            out[(j, i)] = mixed;
        }
    }
    Ok(out)
}
