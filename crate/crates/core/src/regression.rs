//! Break-dummy design, partialling out stable covariates, and OLS.

use crate::bases::break_index;
use crate::error::{Error, Result};
use crate::numkit::linalg::{cholesky, spd_solve};
use crate::numkit::Matrix;

/// Observed data and the hypothesized break fraction.
#[derive(Debug, Clone)]
pub struct RegressionData {
    pub y: Vec<f64>,
    /// `T x m` regressors whose coefficients may break.
    pub x: Matrix,
    /// Optional `T x l` covariates with stable coefficients.
    pub z: Option<Matrix>,
    pub lambda: f64,
}

impl RegressionData {
    pub fn new(y: Vec<f64>, x: Matrix, z: Option<Matrix>, lambda: f64) -> Result<Self> {
        let d = Self { y, x, z, lambda };
        d.validate()?;
        Ok(d)
    }

    pub fn t(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.cols()
    }

    pub fn l(&self) -> usize {
        self.z.as_ref().map_or(0, Matrix::cols)
    }

    pub fn break_index(&self) -> usize {
        break_index(self.t(), self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.t();
        if self.x.rows() != t {
            return Err(Error::Dimension(format!("X has {} rows, Y has {t}", self.x.rows())));
        }
        if let Some(z) = &self.z {
            if z.rows() != t {
                return Err(Error::Dimension(format!("Z has {} rows, Y has {t}", z.rows())));
            }
            if !z.is_finite() {
                return Err(Error::Domain("Z contains non-finite values".into()));
            }
        }
        if self.m() == 0 {
            return Err(Error::Dimension("X needs at least one column".into()));
        }
        if !self.y.iter().all(|v| v.is_finite()) || !self.x.is_finite() {
            return Err(Error::Domain("data contain non-finite values".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Domain(format!(
                "break fraction must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        let m = self.m();
        if t <= 2 * m + self.l() + 2 {
            return Err(Error::Dimension(format!(
                "T = {t} too small for m = {m}, l = {}",
                self.l()
            )));
        }
        let k = self.break_index();
        let min = m + 2;
        if k < min || t - k < min {
            return Err(Error::RegimeTooSmall {
                t,
                break_index: k,
                min,
            });
        }
        Ok(())
    }
}

/// Null hypothesis `R_small beta_1 = R_small beta_2`, i.e. `R beta = 0` with
/// `R = [R_small, -R_small]`.
#[derive(Debug, Clone)]
pub struct BreakHypothesis {
    pub r_small: Matrix,
}

impl BreakHypothesis {
    pub fn new(r_small: Matrix) -> Result<Self> {
        let (p, m) = r_small.shape();
        if p == 0 || p > m {
            return Err(Error::Dimension(format!("restriction matrix must have 1 <= p <= m, got {p}x{m}")));
        }
        cholesky(&r_small.matmul(&r_small.transpose()))
            .map_err(|_| Error::Domain("restriction matrix is not of full row rank".into()))?;
        Ok(Self { r_small })
    }

    /// Equality of all `m` coefficients.
    pub fn full(m: usize) -> Self {
        Self {
            r_small: Matrix::identity(m),
        }
    }

    pub fn p(&self) -> usize {
        self.r_small.rows()
    }

    pub fn m(&self) -> usize {
        self.r_small.cols()
    }

    /// `R = [R_small, -R_small]`, `p x 2m`.
    pub fn r(&self) -> Matrix {
        let (p, m) = self.r_small.shape();
        let mut r = Matrix::zeros(p, 2 * m);
        for i in 0..p {
            for j in 0..m {
                r[(i, j)] = self.r_small[(i, j)];
                r[(i, m + j)] = -self.r_small[(i, j)];
            }
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// `beta_1` stacked on `beta_2`.
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `X_z' X_z / T`.
    pub q_hat: Matrix,
    /// Effective `T x 2m` regressors: the break design, partialled if `Z` is present.
    pub xz: Matrix,
    pub break_index: usize,
}

impl FitResult {
    pub fn t(&self) -> usize {
        self.residuals.len()
    }
}

/// Row `t` is `(X_t, 0)` up to the break index and `(0, X_t)` after.
pub fn build_break_design(x: &Matrix, lambda: f64) -> Result<Matrix> {
    let (t, m) = x.shape();
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("break fraction must lie in (0, 1), got {lambda}")));
    }
    let k = break_index(t, lambda);
    if k < m || t - k < m {
        return Err(Error::RegimeTooSmall {
            t,
            break_index: k,
            min: m,
        });
    }
    let mut d = Matrix::zeros(t, 2 * m);
    for i in 0..t {
        let offset = if i < k { 0 } else { m };
        for j in 0..m {
            d[(i, offset + j)] = x[(i, j)];
        }
    }
    Ok(d)
}

/// `M_Z A = A - Z (Z'Z)^{-1} Z'A`.
pub fn partial_out(a: &Matrix, z: &Matrix) -> Result<Matrix> {
    if z.rows() != a.rows() {
        return Err(Error::Dimension(format!(
            "A has {} rows, Z has {}",
            a.rows(),
            z.rows()
        )));
    }
    if z.cols() == 0 {
        return Ok(a.clone());
    }
    let coef = spd_solve(&z.t_matmul(z), &z.t_matmul(a))?;
    Ok(a.sub(&z.matmul(&coef)))
}

/// OLS of `Y` on the break design, after partialling out `Z` when present.
///
/// The hypothesis is only checked for conformity with `X`.
pub fn ols_fit(data: &RegressionData, hyp: &BreakHypothesis) -> Result<FitResult> {
    data.validate()?;
    if hyp.m() != data.m() {
        return Err(Error::Dimension(format!(
            "restriction matrix has {} columns, X has {}",
            hyp.m(),
            data.m()
        )));
    }
    let t = data.t();
    let design = build_break_design(&data.x, data.lambda)?;
    let y = Matrix::column_vector(&data.y);
    let (xz, yz) = match &data.z {
        Some(z) => (partial_out(&design, z)?, partial_out(&y, z)?),
        None => (design, y),
    };
    let gram = xz.t_matmul(&xz);
    let beta = spd_solve(&gram, &xz.t_matmul(&yz))?;
    let fitted = xz.matmul(&beta);
    let residuals: Vec<f64> = yz
        .as_slice()
        .iter()
        .zip(fitted.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(FitResult {
        beta_hat: beta.into_vec(),
        residuals,
        q_hat: gram.scale(1.0 / t as f64),
        xz,
        break_index: data.break_index(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::rng::{standard_normals, RngStream};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::from_vec(rows, cols, standard_normals(&mut RngStream::new(seed, 0), rows * cols)).unwrap()
    }

    #[test]
    fn design_small_case() {
        let d = build_break_design(&Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap(), 0.5).unwrap();
        assert_eq!(d, Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]));
    }

    #[test]
    fn design_direct_indexing() {
        let x = random_matrix(10, 2, 3);
        let d = build_break_design(&x, 0.4).unwrap();
        for t in 0..10 {
            for j in 0..2 {
                let (a, b) = if t < 4 { (x[(t, j)], 0.0) } else { (0.0, x[(t, j)]) };
                assert_eq!(d[(t, j)], a);
                assert_eq!(d[(t, 2 + j)], b);
            }
        }
        let g = d.t_matmul(&d);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(g[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn partial_out_cases() {
        let a = random_matrix(30, 3, 1);
        let empty = Matrix::zeros(30, 0);
        assert_eq!(partial_out(&a, &empty).unwrap(), a);

        let z = random_matrix(30, 2, 2);
        let in_span = z.matmul(&Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]));
        assert!(partial_out(&in_span, &z).unwrap().max_abs() < 1e-12);

        let m = partial_out(&a, &z).unwrap();
        let ortho = z.t_matmul(&m);
        assert!(ortho.max_abs() <= 1e-8 * a.max_abs() * 30.0);

        let collinear = Matrix::from_columns(&[z.column(0), z.column(0)]).unwrap();
        assert!(matches!(
            partial_out(&a, &collinear),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn perfect_fit_recovers_beta() {
        let x = random_matrix(20, 2, 5);
        let beta = [1.0, -0.5, 2.0, 0.25];
        let d = build_break_design(&x, 0.5).unwrap();
        let y = d.matvec(&beta);
        let data = RegressionData::new(y, x, None, 0.5).unwrap();
        let fit = ols_fit(&data, &BreakHypothesis::full(2)).unwrap();
        for (a, b) in fit.beta_hat.iter().zip(beta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fit.residuals.iter().all(|u| u.abs() < 1e-12));
    }

    #[test]
    fn intercept_only_gives_regime_means() {
        let y: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).sin() + i as f64).collect();
        let x = Matrix::from_vec(20, 1, vec![1.0; 20]).unwrap();
        let data = RegressionData::new(y.clone(), x, None, 0.4).unwrap();
        let fit = ols_fit(&data, &BreakHypothesis::full(1)).unwrap();
        let m1 = y[..8].iter().sum::<f64>() / 8.0;
        let m2 = y[8..].iter().sum::<f64>() / 12.0;
        assert!((fit.beta_hat[0] - m1).abs() < 1e-12);
        assert!((fit.beta_hat[1] - m2).abs() < 1e-12);
        assert_eq!(fit.q_hat[(0, 1)], 0.0);
    }

    #[test]
    fn regimes_are_separated_without_z() {
        let x = random_matrix(30, 2, 8);
        let mut y = standard_normals(&mut RngStream::new(9, 0), 30);
        let data = RegressionData::new(y.clone(), x.clone(), None, 0.5).unwrap();
        let fit = ols_fit(&data, &BreakHypothesis::full(2)).unwrap();
        for v in &mut y[15..] {
            *v += 3.0;
        }
        let data2 = RegressionData::new(y, x, None, 0.5).unwrap();
        let fit2 = ols_fit(&data2, &BreakHypothesis::full(2)).unwrap();
        assert_eq!(fit.beta_hat[..2], fit2.beta_hat[..2]);
    }

    #[test]
    fn residuals_orthogonal_to_regressors_with_z() {
        let x = random_matrix(40, 2, 11);
        let z = random_matrix(40, 1, 12);
        let y = standard_normals(&mut RngStream::new(13, 0), 40);
        let data = RegressionData::new(y, x, Some(z.clone()), 0.4).unwrap();
        let fit = ols_fit(&data, &BreakHypothesis::full(2)).unwrap();
        let u = Matrix::column_vector(&fit.residuals);
        assert!(fit.xz.t_matmul(&u).max_abs() < 1e-10);
        assert!(z.t_matmul(&u).max_abs() < 1e-10);
    }

    #[test]
    fn validation_errors() {
        let x = Matrix::from_vec(100, 1, vec![1.0; 100]).unwrap();
        let y = vec![0.0; 100];
        assert!(matches!(
            RegressionData::new(y.clone(), x.clone(), None, 0.99),
            Err(Error::RegimeTooSmall { .. })
        ));
        assert!(RegressionData::new(y.clone(), x.clone(), None, 1.2).is_err());
        assert!(RegressionData::new(y[..50].to_vec(), x, None, 0.5).is_err());
        assert!(BreakHypothesis::new(Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]])).is_err());
        assert!(BreakHypothesis::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])).is_err());
    }

    #[test]
    fn r_matrix_layout() {
        let h = BreakHypothesis::new(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        assert_eq!(h.r(), Matrix::from_rows(&[[1.0, 0.0, -1.0, 0.0]]));
    }
}
