//! Wishart factor with statistics `(vech(X), ln|X|)`.
//!
//! Parameterized as `W(V, n)` with `E[X] = nV` and density
//! `|X|^{(n-p-1)/2} exp(-tr(V^-1 X)/2) / Z`. In vech storage the natural
//! parameters are `-(V^-1)_aa / 2` on diagonal statistics, `-(V^-1)_ab` on
//! off-diagonal statistics, and `(n - p - 1)/2` on `ln|X|`.
//!
//! Covariance entries follow from standard Wishart moment identities:
//! `Cov(X_ab, X_cd) = n (V_ac V_bd + V_ad V_bc)`,
//! `Cov(X_ab, ln|X|) = 2 V_ab`, and
//! `Var(ln|X|) = sum_i psi'((n + 1 - i)/2)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{vech_len, vech_pairs, vech_unpack};
use crate::special::{ln_mv_gamma, mv_digamma, mv_trigamma};

const LN_2: f64 = std::f64::consts::LN_2;

struct Params {
    n: f64,
    v: DMatrix<f64>,
    ln_det_v: f64,
}

fn params(p: usize, eta: &DVector<f64>) -> Result<Params> {
    let t = vech_len(p);
    let mut v_inv = DMatrix::zeros(p, p);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        let q = eta[idx];
        if a == b {
            v_inv[(a, a)] = -2.0 * q;
        } else {
            v_inv[(a, b)] = -q;
            v_inv[(b, a)] = -q;
        }
    }
    let n = 2.0 * eta[t] + p as f64 + 1.0;
    if n <= p as f64 - 1.0 {
        return Err(Error::Domain(format!(
            "wishart needs dof > p - 1, got dof {n} with p {p}"
        )));
    }
    let chol = v_inv
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("wishart natural scale inverse not positive definite".into()))?;
    let v = chol.inverse();
    let ln_det_v = -2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok(Params { n, v, ln_det_v })
}

pub fn mean_from_natural(p: usize, eta: &DVector<f64>) -> Result<DVector<f64>> {
    let pr = params(p, eta)?;
    let t = vech_len(p);
    let mut m = DVector::zeros(t + 1);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        m[idx] = pr.n * pr.v[(a, b)];
    }
    m[t] = mv_digamma(p, pr.n / 2.0) + p as f64 * LN_2 + pr.ln_det_v;
    Ok(m)
}

/// Solves `sum_i psi((n + 1 - i)/2) - p ln(n/2) = rhs` for `n > p - 1`.
fn solve_dof(p: usize, rhs: f64) -> Result<f64> {
    if !(rhs < 0.0) {
        return Err(Error::Domain(format!(
            "wishart mean parameters need E[ln|X|] < ln|E[X]| (Jensen); got gap {rhs:.3e}"
        )));
    }
    let pf = p as f64;
    let g = |n: f64| mv_digamma(p, n / 2.0) - pf * (n / 2.0).ln() - rhs;
    let floor = pf - 1.0;
    // For large n the left side behaves like -p(p+1)/(2n) plus O(1/n^2).
    let mut n = (-0.5 * pf * (pf + 1.0) / rhs).max(floor + 0.5);
    let mut lo = n;
    let mut hi = n;
    while g(lo) > 0.0 {
        lo = floor + 0.5 * (lo - floor);
        if lo - floor < 1e-12 {
            break;
        }
    }
    while g(hi) < 0.0 {
        hi = floor + 2.0 * (hi - floor);
        if hi > 1e300 {
            return Err(Error::NoConvergence(format!("wishart dof bracketing, rhs {rhs:.3e}")));
        }
    }
    n = n.clamp(lo, hi);
    for _ in 0..200 {
        let f = g(n);
        if f > 0.0 {
            hi = n;
        } else {
            lo = n;
        }
        let deriv = 0.5 * mv_trigamma(p, n / 2.0) - pf / n;
        let mut next = n - f / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - n).abs() <= 1e-13 * (1.0 + n.abs()) {
            return Ok(next);
        }
        n = next;
    }
    Err(Error::NoConvergence(format!("wishart dof solve, rhs {rhs:.3e}")))
}

pub fn natural_from_mean(p: usize, mean: &DVector<f64>) -> Result<DVector<f64>> {
    let t = vech_len(p);
    let m = vech_unpack(p, &mean.as_slice()[..t]);
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("wishart mean E[X] not positive definite".into()))?;
    let ln_det_m = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let rhs = mean[t] - ln_det_m;
    let n = solve_dof(p, rhs)?;
    let v_inv = (m / n).cholesky().expect("scaled mean stays PD").inverse();
    let mut eta = DVector::zeros(t + 1);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        eta[idx] = if a == b { -0.5 * v_inv[(a, a)] } else { -v_inv[(a, b)] };
    }
    eta[t] = 0.5 * (n - p as f64 - 1.0);
    Ok(eta)
}

pub fn covariance(p: usize, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let pr = params(p, eta)?;
    let t = vech_len(p);
    let mut c = DMatrix::zeros(t + 1, t + 1);
    for (i1, (a, b)) in vech_pairs(p).enumerate() {
        for (i2, (cc, d)) in vech_pairs(p).enumerate() {
            if i2 < i1 {
                continue;
            }
            let v = pr.n * (pr.v[(a, cc)] * pr.v[(b, d)] + pr.v[(a, d)] * pr.v[(b, cc)]);
            c[(i1, i2)] = v;
            c[(i2, i1)] = v;
        }
        let v = 2.0 * pr.v[(a, b)];
        c[(i1, t)] = v;
        c[(t, i1)] = v;
    }
    c[(t, t)] = mv_trigamma(p, pr.n / 2.0);
    Ok(c)
}

pub fn entropy(p: usize, eta: &DVector<f64>) -> Result<f64> {
    let pr = params(p, eta)?;
    let pf = p as f64;
    Ok((pf + 1.0) / 2.0 * pr.ln_det_v
        + 0.5 * pf * (pf + 1.0) * LN_2
        + ln_mv_gamma(p, pr.n / 2.0)
        - (pr.n - pf - 1.0) / 2.0 * mv_digamma(p, pr.n / 2.0)
        + pr.n * pf / 2.0)
}

pub fn log_partition(p: usize, eta: &DVector<f64>) -> Result<f64> {
    let pr = params(p, eta)?;
    Ok(pr.n / 2.0 * (pr.ln_det_v + p as f64 * LN_2) + ln_mv_gamma(p, pr.n / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eta_from(p: usize, v: &DMatrix<f64>, n: f64) -> DVector<f64> {
        let v_inv = v.clone().cholesky().unwrap().inverse();
        let t = vech_len(p);
        let mut eta = DVector::zeros(t + 1);
        for (idx, (a, b)) in vech_pairs(p).enumerate() {
            eta[idx] = if a == b { -0.5 * v_inv[(a, a)] } else { -v_inv[(a, b)] };
        }
        eta[t] = 0.5 * (n - p as f64 - 1.0);
        eta
    }

    #[test]
    fn p1_reduces_to_gamma() {
        // W(v, n) in one dimension is Gamma(shape n/2, rate 1/(2v)).
        let (v, n) = (0.7, 5.0);
        let eta = eta_from(1, &DMatrix::from_element(1, 1, v), n);
        let m = mean_from_natural(1, &eta).unwrap();
        let g = super::super::gamma::mean_from_natural(&DVector::from_vec(vec![
            -1.0 / (2.0 * v),
            n / 2.0 - 1.0,
        ]))
        .unwrap();
        assert_abs_diff_eq!(m[0], g[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], g[1], epsilon = 1e-12);
        let cw = covariance(1, &eta).unwrap();
        let cg = super::super::gamma::covariance(&DVector::from_vec(vec![
            -1.0 / (2.0 * v),
            n / 2.0 - 1.0,
        ]))
        .unwrap();
        assert_abs_diff_eq!(cw[(0, 0)], cg[(0, 0)], epsilon = 1e-12);
        assert_abs_diff_eq!(cw[(0, 1)], cg[(0, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(cw[(1, 1)], cg[(1, 1)], epsilon = 1e-12);
    }

    #[test]
    fn round_trip_p3() {
        let v = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3, -0.1, 0.3, 2.0, 0.4, -0.1, 0.4, 0.8],
        );
        let eta = eta_from(3, &v, 9.5);
        let m = mean_from_natural(3, &eta).unwrap();
        let back = natural_from_mean(3, &m).unwrap();
        for i in 0..eta.len() {
            assert_abs_diff_eq!(back[i], eta[i], epsilon = 1e-8 * (1.0 + eta[i].abs()));
        }
    }

    #[test]
    fn rejects_low_dof() {
        let v = DMatrix::identity(3, 3);
        let eta = eta_from(3, &v, 1.5); // dof must exceed p - 1 = 2
        assert!(mean_from_natural(3, &eta).is_err());
    }
}
