//! Series long-run variance estimator and the sandwich variance of `R beta_hat`.

use serde::Serialize;

use crate::bases::BasisFamily;
use crate::error::{Error, Result};
use crate::numkit::linalg::spd_solve;
use crate::numkit::Matrix;

#[derive(Debug, Clone, Serialize)]
pub struct LongRunEstimate {
    pub omega_hat: Vec<Vec<f64>>,
    pub sandwich: Vec<Vec<f64>>,
    pub k: usize,
    pub basis_family: BasisFamily,
}

/// `T x c` score matrix with rows `X_{z,t} u_t`.
pub fn score_matrix(xz: &Matrix, u_hat: &[f64]) -> Result<Matrix> {
    if xz.rows() != u_hat.len() {
        return Err(Error::Dimension(format!(
            "regressors have {} rows, residuals {}",
            xz.rows(),
            u_hat.len()
        )));
    }
    let mut s = xz.clone();
    for (i, &u) in u_hat.iter().enumerate() {
        for v in s.row_mut(i) {
            *v *= u;
        }
    }
    Ok(s)
}

/// `(1/K) sum_j [T^{-1/2} sum_t phi_{j,t} s_t]^{⊗2}` over the first `k`
/// columns of `phi`, for a `T x c` series `s`.
///
/// Accumulated as `G = Phi' S / sqrt(T)` and `G'G / K`.
pub fn series_average(phi: &Matrix, k: usize, s: &Matrix) -> Result<Matrix> {
    let t = s.rows();
    if phi.rows() != t {
        return Err(Error::Dimension(format!(
            "basis has T = {}, scores have T = {t}",
            phi.rows()
        )));
    }
    if k == 0 || k > phi.cols() {
        return Err(Error::Dimension(format!("K = {k} outside 1..={}", phi.cols())));
    }
    let c = s.cols();
    let mut g = Matrix::zeros(k, c);
    for i in 0..t {
        let phi_row = &phi.row(i)[..k];
        let s_row = s.row(i);
        for (j, &w) in phi_row.iter().enumerate() {
            let g_row = g.row_mut(j);
            for (gv, &sv) in g_row.iter_mut().zip(s_row) {
                *gv += w * sv;
            }
        }
    }
    let g = g.scale(1.0 / (t as f64).sqrt());
    Ok(g.t_matmul(&g).scale(1.0 / k as f64).symmetrized())
}

/// Series estimator `Omega_hat` from the basis columns, the effective
/// regressors and the residuals.
pub fn series_lrv(phi: &Matrix, xz: &Matrix, u_hat: &[f64]) -> Result<Matrix> {
    if !u_hat.iter().all(|u| u.is_finite()) {
        return Err(Error::Domain("residuals contain non-finite values".into()));
    }
    let s = score_matrix(xz, u_hat)?;
    series_average(phi, phi.cols(), &s)
}

/// `R Q^{-1} Omega Q^{-1} R'`, symmetrized.
pub fn sandwich_variance(r: &Matrix, q_hat: &Matrix, omega_hat: &Matrix) -> Result<Matrix> {
    if r.cols() != q_hat.rows() || omega_hat.shape() != q_hat.shape() {
        return Err(Error::Dimension("sandwich: incompatible shapes".into()));
    }
    let a = spd_solve(q_hat, &r.transpose())?;
    Ok(a.t_matmul(&omega_hat.matmul(&a)).symmetrized())
}
