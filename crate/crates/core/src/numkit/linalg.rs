//! Symmetric positive-definite factorizations, small dense solves and the
//! discrete Lyapunov equation.

use super::Matrix;
use crate::error::{Error, Result};

/// Relative pivot tolerance shared by every SPD factorization in the crate.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric(s: &Matrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    let n = s.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Upper-triangular Cholesky factor `U` with `S = U'U`.
///
/// The input is symmetrized as `(S + S')/2` first. A pivot at or below
/// `1e-12` times the largest diagonal entry is reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    check_symmetric(s)?;
    let s = s.symmetrized();
    let (u, rank) = cholesky_leading(&s);
    if rank < s.rows() {
        let pivot = leading_pivot(&s, &u, rank);
        return Err(Error::NotPositiveDefinite { index: rank, pivot });
    }
    Ok(u)
}

/// Column-by-column ("up-looking") Cholesky that stops at the first failing
/// pivot. Returns the full-size factor (columns past the rank are zero) and
/// the size of the largest positive-definite leading block.
///
/// Column `j` of `U` depends only on the leading `(j+1) x (j+1)` block of
/// `S`, so the factor of any leading block is the matching block of this
/// factor, bit for bit. The pivot threshold uses the largest diagonal of the
/// leading block seen so far, which keeps that property.
pub fn cholesky_leading(s: &Matrix) -> (Matrix, usize) {
    let n = s.rows();
    let mut u = Matrix::zeros(n, n);
    let mut max_diag: f64 = 0.0;
    for j in 0..n {
        max_diag = max_diag.max(s[(j, j)].abs());
        for i in 0..j {
            let mut acc = s[(i, j)];
            for k in 0..i {
                acc -= u[(k, i)] * u[(k, j)];
            }
            u[(i, j)] = acc / u[(i, i)];
        }
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= u[(k, j)] * u[(k, j)];
        }
        if !(d > SPD_PIVOT_TOL * max_diag) {
            for i in 0..j {
                u[(i, j)] = 0.0;
            }
            return (u, j);
        }
        u[(j, j)] = d.sqrt();
    }
    (u, n)
}

fn leading_pivot(s: &Matrix, u: &Matrix, j: usize) -> f64 {
    let mut d = s[(j, j)];
    for i in 0..j {
        let mut acc = s[(i, j)];
        for k in 0..i {
            acc -= u[(k, i)] * u[(k, j)];
        }
        let uij = acc / u[(i, i)];
        d -= uij * uij;
    }
    d
}

/// Solves `U' Y = B` for upper-triangular `U` (forward substitution).
pub fn solve_upper_transpose(u: &Matrix, b: &Matrix) -> Matrix {
    let n = u.rows();
    assert_eq!(b.rows(), n);
    let mut y = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut acc = y[(i, c)];
            for k in 0..i {
                acc -= u[(k, i)] * y[(k, c)];
            }
            y[(i, c)] = acc / u[(i, i)];
        }
    }
    y
}

/// Solves `U X = B` for upper-triangular `U` (back substitution).
pub fn solve_upper(u: &Matrix, b: &Matrix) -> Matrix {
    let n = u.rows();
    assert_eq!(b.rows(), n);
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, c)];
            for k in (i + 1)..n {
                acc -= u[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = acc / u[(i, i)];
        }
    }
    x
}

/// Right solve `X U = B` for upper-triangular `U`, i.e. `X = B U^{-1}`.
///
/// Column `j` of `X` uses only columns `0..=j` of `B`.
pub fn right_solve_upper(b: &Matrix, u: &Matrix) -> Matrix {
    let k = u.rows();
    assert_eq!(b.cols(), k);
    let mut x = Matrix::zeros(b.rows(), k);
    for r in 0..b.rows() {
        let b_row = b.row(r);
        let x_row = x.row_mut(r);
        for j in 0..k {
            let mut acc = b_row[j];
            for i in 0..j {
                acc -= x_row[i] * u[(i, j)];
            }
            x_row[j] = acc / u[(j, j)];
        }
    }
    x
}

/// Solves `S X = B` for symmetric positive-definite `S` through its Cholesky
/// factor and two triangular solves.
pub fn spd_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != s.rows() {
        return Err(Error::Dimension(format!(
            "spd_solve: S is {}x{}, B has {} rows",
            s.rows(),
            s.cols(),
            b.rows()
        )));
    }
    let u = cholesky(s)?;
    let y = solve_upper_transpose(&u, b);
    Ok(solve_upper(&u, &y))
}

pub fn spd_solve_vec(s: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(spd_solve(s, &Matrix::column_vector(b))?.into_vec())
}

pub fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    spd_solve(s, &Matrix::identity(s.rows()))
}

/// General square solve `A X = B` by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || b.rows() != a.rows() {
        return Err(Error::Dimension("lu_solve: incompatible shapes".into()));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, lu[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_val <= 1e-14 * scale {
            return Err(Error::NotPositiveDefinite {
                index: col,
                pivot: piv_val,
            });
        }
        if piv != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(piv, j)];
                lu[(piv, j)] = tmp;
            }
            for j in 0..x.cols() {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(piv, j)];
                x[(piv, j)] = tmp;
            }
        }
        for r in (col + 1)..n {
            let f = lu[(r, col)] / lu[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                lu[(r, j)] -= f * lu[(col, j)];
            }
            for j in 0..x.cols() {
                x[(r, j)] -= f * x[(col, j)];
            }
        }
    }
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)];
            for k in (i + 1)..n {
                acc -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / lu[(i, i)];
        }
    }
    Ok(x)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    lu_solve(a, &Matrix::identity(a.rows()))
}

/// Spectral radius of a small square matrix.
///
/// Exact for 1x1 and 2x2 inputs; otherwise Gelfand's formula
/// `rho = lim ||A^k||^{1/k}` evaluated at `k = 2^48` by repeated squaring
/// with renormalization.
pub fn spectral_radius(a: &Matrix) -> f64 {
    assert!(a.is_square());
    match a.rows() {
        0 => 0.0,
        1 => a[(0, 0)].abs(),
        2 => {
            let tr = a.trace();
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                ((tr + s) / 2.0).abs().max(((tr - s) / 2.0).abs())
            } else {
                det.abs().sqrt()
            }
        }
        _ => {
            let norm = a.frobenius();
            if norm == 0.0 {
                return 0.0;
            }
            let mut b = a.scale(1.0 / norm);
            // log ||A^k|| accumulated as k doubles.
            let mut log_norm = norm.ln();
            let mut power = 1.0_f64;
            for _ in 0..48 {
                b = b.matmul(&b);
                power *= 2.0;
                log_norm *= 2.0;
                let n = b.frobenius();
                if n == 0.0 {
                    return 0.0;
                }
                log_norm += n.ln();
                b = b.scale(1.0 / n);
            }
            (log_norm / power).exp()
        }
    }
}

/// Stability margin used by [`lyapunov_solve`].
pub const LYAPUNOV_STABILITY_TOL: f64 = 1.0 - 1e-6;

/// Solves `G = A G A' + Sigma` for stable `A` by the doubling iteration
/// `G <- G + A_k G A_k'`, `A_k <- A_k^2`.
pub fn lyapunov_solve(a: &Matrix, sigma: &Matrix) -> Result<Matrix> {
    if !a.is_square() || sigma.shape() != a.shape() {
        return Err(Error::Dimension("lyapunov_solve: incompatible shapes".into()));
    }
    let rho = spectral_radius(a);
    if !(rho < LYAPUNOV_STABILITY_TOL) {
        return Err(Error::Unstable(rho));
    }
    let mut g = sigma.symmetrized();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.matmul(&g).matmul(&ak.transpose());
        g = g.add(&inc);
        ak = ak.matmul(&ak);
        if ak.max_abs() < 1e-300 || inc.max_abs() <= 1e-17 * g.max_abs() {
            break;
        }
    }
    Ok(g.symmetrized())
}
