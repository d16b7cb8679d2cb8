//! Data-driven number of basis functions.
//!
//! The contrast `R sqrt(T)(beta_hat - beta)` is asymptotically a normalized
//! sum of `v_t = R Q^{-1} X_t' u_t`, so the sandwich is a series estimator of
//! the long-run variance of `v_t`. A VAR(1) fitted to `v_hat_t` supplies the
//! long-run variance `Omega_v` and the curvature `B = sum_h h^2 Gamma(h)`.
//! With bias `-(c pi^2 K^2 / 6T^2) B` and variance
//! `tr((I + K_pp)(Omega ⊗ Omega)) / K`, the MSE-minimizing K is
//!
//! ```text
//! K* = [ 9 tr((I + K_pp)(Omega ⊗ Omega)) / (c^2 pi^4 vec(B)'vec(B)) ]^{1/5} T^{4/5}.
//! ```
//!
//! [`KRule::Index`] (the default, `c = 4`) places the j-th basis function at
//! frequency `2 pi j / T`; [`KRule::Pair`] (`c = 1`) places the j-th sine/cosine
//! pair there.

use std::f64::consts::PI;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{inverse, lyapunov_solve, spd_solve, spectral_radius};
use crate::numkit::Matrix;

/// Spectral radius at or above which the fitted VAR is treated as explosive.
pub const UNSTABLE_RADIUS: f64 = 1.0 - 1e-6;
/// Radius an explosive fit is shrunk to.
pub const CLAMP_RADIUS: f64 = 0.97;

#[derive(Debug, Clone)]
pub struct Var1Fit {
    pub a_hat: Matrix,
    pub sigma_hat: Matrix,
    /// Set when the raw estimate was rescaled to [`CLAMP_RADIUS`].
    pub clamped: bool,
    pub raw_radius: f64,
}

#[derive(Debug, Clone)]
pub struct PluginModel {
    pub a_hat: Matrix,
    pub sigma_hat: Matrix,
    pub gamma0: Matrix,
    pub omega_v: Matrix,
    pub b_hat: Matrix,
    pub clamped: bool,
}

/// Plain nested-vector view of a [`PluginModel`] for reports.
#[derive(Debug, Clone, Serialize)]
pub struct PluginSummary {
    pub a_hat: Vec<Vec<f64>>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub gamma0: Vec<Vec<f64>>,
    pub omega_v: Vec<Vec<f64>>,
    pub b_hat: Vec<Vec<f64>>,
    pub clamped: bool,
    pub k_star: f64,
}

pub(crate) fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

impl PluginModel {
    pub fn summary(&self, k_star: f64) -> PluginSummary {
        PluginSummary {
            a_hat: to_rows(&self.a_hat),
            sigma_hat: to_rows(&self.sigma_hat),
            gamma0: to_rows(&self.gamma0),
            omega_v: to_rows(&self.omega_v),
            b_hat: to_rows(&self.b_hat),
            clamped: self.clamped,
            k_star,
        }
    }
}

/// `T x p` matrix with rows `v_hat_t = R Q^{-1} X_{z,t}' u_t`.
pub fn score_series(r: &Matrix, q_hat: &Matrix, xz: &Matrix, u_hat: &[f64]) -> Result<Matrix> {
    if xz.rows() != u_hat.len() || xz.cols() != q_hat.rows() || r.cols() != q_hat.rows() {
        return Err(Error::Dimension("score_series: incompatible shapes".into()));
    }
    // W = Q^{-1} R'  (2m x p); v_t = (X_t u_t) W
    let w = spd_solve(q_hat, &r.transpose())?;
    let p = r.rows();
    let mut v = Matrix::zeros(xz.rows(), p);
    for (t, &u) in u_hat.iter().enumerate() {
        let x_row = xz.row(t);
        let v_row = v.row_mut(t);
        for (c, &x) in x_row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let xu = x * u;
            for (j, out) in v_row.iter_mut().enumerate() {
                *out += xu * w[(c, j)];
            }
        }
    }
    Ok(v)
}

/// Least-squares VAR(1) without intercept: `v_t = A v_{t-1} + e_t`.
pub fn fit_var1(v: &Matrix) -> Result<Var1Fit> {
    let (t, p) = v.shape();
    if t < p + 10 {
        return Err(Error::Dimension(format!("VAR(1) needs T >= p + 10, got T = {t}, p = {p}")));
    }
    let mut lagged = Matrix::zeros(t - 1, p);
    let mut current = Matrix::zeros(t - 1, p);
    for i in 1..t {
        lagged.row_mut(i - 1).copy_from_slice(v.row(i - 1));
        current.row_mut(i - 1).copy_from_slice(v.row(i));
    }
    // A' = (L'L)^{-1} L'C
    let a_t = spd_solve(&lagged.t_matmul(&lagged), &lagged.t_matmul(&current))?;
    let mut a_hat = a_t.transpose();
    let resid = current.sub(&lagged.matmul(&a_t));
    let dof = (t - 1 - p) as f64;
    let sigma_hat = resid.t_matmul(&resid).scale(1.0 / dof).symmetrized();
    let raw_radius = spectral_radius(&a_hat);
    let clamped = !(raw_radius < UNSTABLE_RADIUS);
    if clamped {
        a_hat = a_hat.scale(CLAMP_RADIUS / raw_radius);
    }
    Ok(Var1Fit {
        a_hat,
        sigma_hat,
        clamped,
        raw_radius,
    })
}

impl PluginModel {
    pub fn from_fit(fit: &Var1Fit) -> Result<Self> {
        let p = fit.a_hat.rows();
        let a = &fit.a_hat;
        let eye = Matrix::identity(p);
        let gamma0 = lyapunov_solve(a, &fit.sigma_hat)?;
        let i_minus_a = eye.sub(a);
        let inv = inverse(&i_minus_a)?;
        let omega_v = inv.matmul(&fit.sigma_hat).matmul(&inv.transpose()).symmetrized();
        // sum_{h>=1} h^2 A^h = A (I + A) (I - A)^{-3}
        let inv3 = inv.matmul(&inv).matmul(&inv);
        let s = a.matmul(&eye.add(a)).matmul(&inv3).matmul(&gamma0);
        let b_hat = s.add(&s.transpose());
        Ok(Self {
            a_hat: a.clone(),
            sigma_hat: fit.sigma_hat.clone(),
            gamma0,
            omega_v,
            b_hat,
            clamped: fit.clamped,
        })
    }
}

/// Bias constant of the plug-in rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KRule {
    /// Bias `-(2 pi^2 K^2 / 3T^2) B`.
    #[default]
    Index,
    /// Bias `-(pi^2 K^2 / 6T^2) B`.
    Pair,
}

impl KRule {
    /// `c^2` in the formula above.
    fn bias_scale_sq(&self) -> f64 {
        match self {
            KRule::Index => 16.0,
            KRule::Pair => 1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            KRule::Index => "index",
            KRule::Pair => "pair",
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(KRule::Index),
            "pair" => Ok(KRule::Pair),
            _ => Err(Error::Config(format!("unknown K rule '{s}' (expected index or pair)"))),
        }
    }
}

/// `tr((I_{p^2} + K_pp)(Omega ⊗ Omega)) = tr(Omega)^2 + tr(Omega^2)`.
pub fn variance_trace(omega: &Matrix) -> f64 {
    let tr = omega.trace();
    tr * tr + omega.matmul(omega).trace()
}

/// Unrounded MSE-optimal K; `None` when the curvature vanishes.
pub fn k_star(model: &PluginModel, t: usize, rule: KRule) -> Option<f64> {
    let b2: f64 = model.b_hat.as_slice().iter().map(|v| v * v).sum();
    if b2 == 0.0 {
        return None;
    }
    let v = variance_trace(&model.omega_v);
    let ratio = 9.0 * v / (rule.bias_scale_sq() * PI.powi(4) * b2);
    Some(ratio.powf(0.2) * (t as f64).powf(0.8))
}

pub fn k_bounds(t: usize, p: usize) -> (usize, usize) {
    (p.max(2), t - 2)
}

/// Rounded and clamped K: `clamp(round(K*), max(p, 2), T - 2)`; ties round up.
pub fn mse_optimal_k(model: &PluginModel, t: usize, p: usize, rule: KRule) -> usize {
    let (lo, hi) = k_bounds(t, p);
    match k_star(model, t, rule) {
        None => hi,
        Some(k) if !k.is_finite() => hi,
        Some(k) => {
            let r = (k + 0.5).floor();
            if r >= hi as f64 {
                hi
            } else if r <= lo as f64 {
                lo
            } else {
                r as usize
            }
        }
    }
}

/// Full data-driven choice from the fitted regression.
#[derive(Debug, Clone)]
pub struct AutoK {
    pub k: usize,
    pub k_star: Option<f64>,
    pub rule: KRule,
    pub model: PluginModel,
}

pub fn choose_k(r: &Matrix, q_hat: &Matrix, xz: &Matrix, u_hat: &[f64], rule: KRule) -> Result<AutoK> {
    let v = score_series(r, q_hat, xz, u_hat)?;
    let fit = fit_var1(&v)?;
    let model = PluginModel::from_fit(&fit)?;
    let t = xz.rows();
    Ok(AutoK {
        k: mse_optimal_k(&model, t, r.rows(), rule),
        k_star: k_star(&model, t, rule),
        rule,
        model,
    })
}

/// Reference implementation of the variance trace through an explicit
/// commutation matrix; kept for cross-checks.
pub fn variance_trace_explicit(omega: &Matrix) -> f64 {
    let p = omega.rows();
    let mut k = Matrix::zeros(p * p, p * p);
    // K vec(A) = vec(A')
    for i in 0..p {
        for j in 0..p {
            k[(i * p + j, j * p + i)] = 1.0;
        }
    }
    let m = Matrix::identity(p * p).add(&k);
    m.matmul(&omega.kron(omega)).trace()
}
