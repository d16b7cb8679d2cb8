//! Heteroscedasticity- and autocorrelation-robust Chow test for a coefficient
//! break at a known date.
//!
//! The long-run variance of the scores is estimated with a series estimator
//! built on Fourier basis vectors. Orthonormalizing those vectors with respect
//! to the break-induced covariance kernel (a Cholesky-based Gram–Schmidt step)
//! makes the scaled Wald statistic asymptotically `F(p, K-p+1)` and the scaled
//! t statistic asymptotically `t(K)` under fixed-K asymptotics.
//!
//! Layout:
//! - [`numkit`]: dense linear algebra, special functions, RNG streams.
//! - [`bases`]: Fourier vectors, the kernel matrix and the transformed basis.
//! - [`regression`]: break design, partialling out, OLS.
//! - [`longrun`]: series long-run variance and sandwich.
//! - [`chowtest`]: statistics, reference distributions, [`chowtest::run_test`].
//! - [`fixedlimit`]: simulated nonstandard limits and the critical-value cache.
//! - [`autok`]: VAR(1) plug-in choice of K.
//! - [`mcstudy`]: Monte Carlo size and power experiments.

pub mod autok;
pub mod bases;
pub mod chowtest;
pub mod error;
pub mod fixedlimit;
pub mod longrun;
pub mod mcstudy;
pub mod numkit;
pub mod regression;

pub use error::{Error, Result};
pub use numkit::Matrix;

/// Library version, recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
