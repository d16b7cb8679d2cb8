//! Basis vectors for the series long-run variance estimator.
//!
//! Raw Fourier vectors are orthonormal in the ordinary sense, but the scores
//! that enter the estimator are built from residuals, so what matters for
//! the limit theory is each vector after within-regime demeaning (the
//! `phi_tilde` grid). The kernel matrix `C_T` encodes that demeaning, and
//! [`gram_transform`] orthonormalizes the raw vectors with respect to
//! `<a, b> = a' C_T b / T^2` via a Cholesky factor: `Phi* = Phi U^{-1}`.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{cholesky_leading, right_solve_upper};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    FourierRaw,
    FourierTransformed,
}

impl BasisFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisFamily::FourierRaw => "fourier-raw",
            BasisFamily::FourierTransformed => "fourier-transformed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fourier-raw" | "raw" => Some(BasisFamily::FourierRaw),
            "fourier-transformed" | "transformed" => Some(BasisFamily::FourierTransformed),
            _ => None,
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            BasisFamily::FourierRaw => 0,
            BasisFamily::FourierTransformed => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(BasisFamily::FourierRaw),
            1 => Some(BasisFamily::FourierTransformed),
            _ => None,
        }
    }
}

/// Last observation (1-based) of the first regime: the largest `i` with
/// `i / T <= lambda`.
///
/// This is `floor(lambda * T)` whenever that product is computed exactly;
/// testing `i / T <= lambda` directly keeps the split identical to the block
/// membership rule of the kernel matrix.
pub fn break_index(t: usize, lambda: f64) -> usize {
    let tf = t as f64;
    let mut k = (lambda * tf).floor().clamp(0.0, tf) as usize;
    while k < t && ((k + 1) as f64) / tf <= lambda {
        k += 1;
    }
    while k > 0 && (k as f64) / tf > lambda {
        k -= 1;
    }
    k
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("break fraction must lie in (0, 1), got {lambda}")))
    }
}

/// A `T x K` matrix of basis vectors, column `j` evaluated at `t/T`,
/// `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub t: usize,
    pub k: usize,
    /// Break fraction the set was orthonormalized for; `None` for raw vectors.
    pub lambda: Option<f64>,
    pub family: BasisFamily,
    pub matrix: Matrix,
}

impl BasisSet {
    pub fn leading(&self, k: usize) -> BasisSet {
        BasisSet {
            k,
            matrix: self.matrix.leading_columns(k),
            ..self.clone()
        }
    }
}

/// Value of the `j`-th (1-based) interleaved Fourier function at `r`:
/// `sqrt(2) cos(2 pi r)`, `sqrt(2) sin(2 pi r)`, `sqrt(2) cos(4 pi r)`, ...
pub fn fourier_value(j: usize, r: f64) -> f64 {
    assert!(j >= 1);
    let freq = j.div_ceil(2) as f64;
    let arg = 2.0 * PI * freq * r;
    if j % 2 == 1 {
        SQRT_2 * arg.cos()
    } else {
        SQRT_2 * arg.sin()
    }
}

/// Raw Fourier basis vectors for sample size `t`, `k` columns.
pub fn fourier_matrix(t: usize, k: usize) -> Result<BasisSet> {
    if t < 4 {
        return Err(Error::Dimension(format!("need T >= 4, got {t}")));
    }
    if k < 1 || k > t - 2 {
        return Err(Error::Dimension(format!("need 1 <= K <= T-2 = {}, got {k}", t - 2)));
    }
    let mut m = Matrix::zeros(t, k);
    let tf = t as f64;
    for i in 0..t {
        let r = (i + 1) as f64 / tf;
        let row = m.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = fourier_value(j + 1, r);
        }
    }
    Ok(BasisSet {
        t,
        k,
        lambda: None,
        family: BasisFamily::FourierRaw,
        matrix: m,
    })
}

/// Discrete covariance kernel `C_T(lambda)`.
///
/// Entry `(i, j)` is `[T 1{i=j} - 1/lambda] / lambda^2` when both `i/T` and
/// `j/T` are at most `lambda`, `[T 1{i=j} - 1/(1-lambda)] / (1-lambda)^2`
/// when both exceed it, and zero otherwise. The matrix is never stored
/// densely; [`KernelMatrix::apply`] is `O(T)`.
#[derive(Debug, Clone, Copy)]
pub struct KernelMatrix {
    pub t: usize,
    pub lambda: f64,
    pub break_index: usize,
}

impl KernelMatrix {
    pub fn new(t: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let k = break_index(t, lambda);
        if k < 2 || t < k + 2 {
            return Err(Error::BreakTooExtreme { t, break_index: k });
        }
        Ok(Self {
            t,
            lambda,
            break_index: k,
        })
    }

    /// Entry for 0-based indices (observations `i+1`, `j+1`).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let tf = self.t as f64;
        let diag = if i == j { tf } else { 0.0 };
        let l = self.lambda;
        let first_i = i < self.break_index;
        let first_j = j < self.break_index;
        match (first_i, first_j) {
            (true, true) => (diag - 1.0 / l) / (l * l),
            (false, false) => (diag - 1.0 / (1.0 - l)) / ((1.0 - l) * (1.0 - l)),
            _ => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.t, self.t);
        for i in 0..self.t {
            for j in 0..self.t {
                m[(i, j)] = self.entry(i, j);
            }
        }
        m
    }

    /// `C_T v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.t);
        let tf = self.t as f64;
        let k = self.break_index;
        let l1 = self.lambda;
        let l2 = 1.0 - self.lambda;
        let s1: f64 = v[..k].iter().sum();
        let s2: f64 = v[k..].iter().sum();
        let mut out = Vec::with_capacity(self.t);
        out.extend(v[..k].iter().map(|&x| (tf * x - s1 / l1) / (l1 * l1)));
        out.extend(v[k..].iter().map(|&x| (tf * x - s2 / l2) / (l2 * l2)));
        out
    }

    /// Gram matrix `Phi' C_T Phi / T^2` of the columns of `phi`.
    ///
    /// Computed blockwise as `(T A_r'A_r - s_r s_r' / w_r) / (w_r^2 T^2)` per
    /// regime `r` with weight `w_r` and column sums `s_r`, which is exactly
    /// symmetric.
    pub fn gram(&self, phi: &Matrix) -> Matrix {
        assert_eq!(phi.rows(), self.t);
        let kcols = phi.cols();
        let tf = self.t as f64;
        let mut g = Matrix::zeros(kcols, kcols);
        let regimes = [
            (0..self.break_index, self.lambda),
            (self.break_index..self.t, 1.0 - self.lambda),
        ];
        for (range, w) in regimes {
            let mut cross = Matrix::zeros(kcols, kcols);
            let mut sums = vec![0.0; kcols];
            for i in range {
                let row = phi.row(i);
                for a in 0..kcols {
                    let ra = row[a];
                    sums[a] += ra;
                    let c_row = cross.row_mut(a);
                    for b in a..kcols {
                        c_row[b] += ra * row[b];
                    }
                }
            }
            let scale = 1.0 / (w * w * tf * tf);
            for a in 0..kcols {
                for b in a..kcols {
                    let v = (tf * cross[(a, b)] - sums[a] * sums[b] / w) * scale;
                    g[(a, b)] += v;
                }
            }
        }
        for a in 0..kcols {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    }
}

/// Kernel inner product `a' C_T b / T^2`.
pub fn kernel_inner(a: &[f64], b: &[f64], c: &KernelMatrix) -> f64 {
    assert_eq!(a.len(), b.len());
    let cb = c.apply(b);
    let tf = c.t as f64;
    a.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>() / (tf * tf)
}

/// Finite-sample transformed function `phi_tilde_{j,T}(t/T; lambda)` for one
/// basis column: the column demeaned within each regime, scaled by `1/lambda`
/// in the first regime and by `-1/(1-lambda)` in the second.
pub fn phi_tilde_grid(phi_col: &[f64], lambda: f64, t: usize) -> Result<Vec<f64>> {
    if phi_col.len() != t {
        return Err(Error::Dimension(format!(
            "basis column has length {}, expected {t}",
            phi_col.len()
        )));
    }
    check_lambda(lambda)?;
    let k = break_index(t, lambda);
    if k < 1 || k >= t {
        return Err(Error::BreakTooExtreme { t, break_index: k });
    }
    Ok(phi_tilde_split(phi_col, lambda, k))
}

fn phi_tilde_split(phi_col: &[f64], lambda: f64, k: usize) -> Vec<f64> {
    let t = phi_col.len();
    let m1 = phi_col[..k].iter().sum::<f64>() / k as f64;
    let m2 = phi_col[k..].iter().sum::<f64>() / (t - k) as f64;
    let a1 = 1.0 / lambda;
    let a2 = -1.0 / (1.0 - lambda);
    phi_col
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < k { a1 * (v - m1) } else { a2 * (v - m2) })
        .collect()
}

/// `phi_tilde` grids for every column of `phi`, as a `T x K` matrix.
pub fn phi_tilde_matrix(phi: &Matrix, lambda: f64) -> Result<Matrix> {
    let t = phi.rows();
    let cols: Result<Vec<Vec<f64>>> = (0..phi.cols())
        .map(|j| phi_tilde_grid(&phi.column(j), lambda, t))
        .collect();
    Matrix::from_columns(&cols?)
}

/// `phi_tilde_0(t/T)`: `1/lambda` in the first regime, `-1/(1-lambda)` after.
pub fn phi_tilde_zero(t: usize, lambda: f64) -> Vec<f64> {
    let k = break_index(t, lambda);
    (0..t)
        .map(|i| if i < k { 1.0 / lambda } else { -1.0 / (1.0 - lambda) })
        .collect()
}

/// Average squared `phi_tilde` norm, `(1/(K T)) sum_j sum_t phi_tilde_j(t/T)^2`.
pub fn norm_factor(phi: &Matrix, lambda: f64) -> Result<f64> {
    let tilde = phi_tilde_matrix(phi, lambda)?;
    let total: f64 = tilde.as_slice().iter().map(|v| v * v).sum();
    Ok(total / (phi.cols() as f64 * phi.rows() as f64))
}

/// Result of the kernel Gram–Schmidt step.
#[derive(Debug, Clone)]
pub struct GramTransform {
    pub basis: BasisSet,
    /// Upper-triangular factor with `Phi' C_T Phi / T^2 = U'U`.
    pub factor: Matrix,
}

/// Orthonormalizes `raw` with respect to the kernel inner product:
/// `Phi* = Phi U^{-1}` where `U` is the Cholesky factor of the Gram matrix.
pub fn gram_transform(raw: &BasisSet, c: &KernelMatrix) -> Result<BasisSet> {
    Ok(gram_transform_with_factor(raw, c)?.basis)
}

pub fn gram_transform_with_factor(raw: &BasisSet, c: &KernelMatrix) -> Result<GramTransform> {
    if raw.t != c.t || raw.matrix.rows() != c.t {
        return Err(Error::Dimension(format!(
            "basis has T = {}, kernel has T = {}",
            raw.t, c.t
        )));
    }
    let gram = c.gram(&raw.matrix);
    let (u, rank) = cholesky_leading(&gram);
    if rank < raw.k {
        let pivot = residual_pivot(&gram, &u, rank);
        return Err(Error::NotPositiveDefinite { index: rank, pivot });
    }
    let transformed = right_solve_upper(&raw.matrix, &u);
    Ok(GramTransform {
        basis: BasisSet {
            t: raw.t,
            k: raw.k,
            lambda: Some(c.lambda),
            family: BasisFamily::FourierTransformed,
            matrix: transformed,
        },
        factor: u,
    })
}

fn residual_pivot(gram: &Matrix, u: &Matrix, j: usize) -> f64 {
    let mut d = gram[(j, j)];
    for i in 0..j {
        let mut acc = gram[(i, j)];
        for k in 0..i {
            acc -= u[(k, i)] * u[(k, j)];
        }
        let uij = acc / u[(i, i)];
        d -= uij * uij;
    }
    d
}

/// Writes `Phi`, `C_T`, `U_T` and `Phi*` as CSV files into `dir`.
pub fn write_debug_csv(dir: &Path, raw: &BasisSet, c: &KernelMatrix) -> Result<()> {
    let gt = gram_transform_with_factor(raw, c)?;
    std::fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("phi.csv"), &raw.matrix)?;
    write_matrix_csv(&dir.join("kernel.csv"), &c.to_dense())?;
    write_matrix_csv(&dir.join("cholesky_u.csv"), &gt.factor)?;
    write_matrix_csv(&dir.join("phi_star.csv"), &gt.basis.matrix)?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Raw and transformed Fourier bases for one `(T, lambda)`, built once for
/// the largest K of interest and sliced per request.
///
/// Because the Cholesky factor of a leading Gram block is the leading block
/// of the full factor, the first `K` transformed columns are exactly the
/// transform of the first `K` raw columns.
#[derive(Debug, Clone)]
pub struct BasisBank {
    pub t: usize,
    pub lambda: f64,
    raw: Matrix,
    transformed: Matrix,
    raw_norm_prefix: Vec<f64>,
    transformed_norm_prefix: Vec<f64>,
}

impl BasisBank {
    pub fn new(t: usize, lambda: f64, k_max: usize) -> Result<Self> {
        let c = KernelMatrix::new(t, lambda)?;
        let raw = fourier_matrix(t, k_max)?.matrix;
        let gram = c.gram(&raw);
        let (u, rank) = cholesky_leading(&gram);
        let transformed = right_solve_upper(&raw.leading_columns(rank), &u.leading_block(rank));
        let raw_norm_prefix = norm_prefix(&raw, lambda, c.break_index);
        let transformed_norm_prefix = norm_prefix(&transformed, lambda, c.break_index);
        Ok(Self {
            t,
            lambda,
            raw,
            transformed,
            raw_norm_prefix,
            transformed_norm_prefix,
        })
    }

    pub fn k_max(&self, family: BasisFamily) -> usize {
        match family {
            BasisFamily::FourierRaw => self.raw.cols(),
            BasisFamily::FourierTransformed => self.transformed.cols(),
        }
    }

    fn full(&self, family: BasisFamily) -> &Matrix {
        match family {
            BasisFamily::FourierRaw => &self.raw,
            BasisFamily::FourierTransformed => &self.transformed,
        }
    }

    /// First `k` columns of the requested family.
    pub fn basis(&self, family: BasisFamily, k: usize) -> Result<BasisSet> {
        let avail = self.k_max(family);
        if k == 0 || k > avail {
            return Err(match family {
                BasisFamily::FourierTransformed if k > 0 => Error::BasisRankDeficient {
                    requested: k,
                    available: avail,
                },
                _ => Error::Dimension(format!("K = {k} outside 1..={avail}")),
            });
        }
        Ok(BasisSet {
            t: self.t,
            k,
            lambda: match family {
                BasisFamily::FourierRaw => None,
                BasisFamily::FourierTransformed => Some(self.lambda),
            },
            family,
            matrix: self.full(family).leading_columns(k),
        })
    }

    /// Full stored matrix for `family`; callers use the first K columns.
    pub fn matrix(&self, family: BasisFamily) -> &Matrix {
        self.full(family)
    }

    /// `(1/(K T)) sum_{j<=K} sum_t phi_tilde_j^2` for the first `k` columns.
    pub fn norm_factor(&self, family: BasisFamily, k: usize) -> f64 {
        let prefix = match family {
            BasisFamily::FourierRaw => &self.raw_norm_prefix,
            BasisFamily::FourierTransformed => &self.transformed_norm_prefix,
        };
        prefix[k] / k as f64
    }
}

// prefix[k] = sum over the first k columns of (1/T) sum_t phi_tilde^2
fn norm_prefix(phi: &Matrix, lambda: f64, k_break: usize) -> Vec<f64> {
    let t = phi.rows();
    let mut prefix = Vec::with_capacity(phi.cols() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for j in 0..phi.cols() {
        let tilde = phi_tilde_split(&phi.column(j), lambda, k_break);
        acc += tilde.iter().map(|v| v * v).sum::<f64>() / t as f64;
        prefix.push(acc);
    }
    prefix
}
