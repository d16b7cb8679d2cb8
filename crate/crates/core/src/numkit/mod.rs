//! Numeric kernel: dense matrices, SPD solves, the discrete Lyapunov
//! equation, reference distributions and reproducible random streams.

pub mod dist;
pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod special;

pub use dist::{dist_cdf, dist_pdf, dist_quantile, dist_sf, two_sided_p, DistFamily};
pub use linalg::{
    cholesky, cholesky_leading, inverse, lu_solve, lyapunov_solve, right_solve_upper,
    spd_inverse, spd_solve, spd_solve_vec, spectral_radius,
};
pub use matrix::Matrix;
pub use rng::{derive_seed, standard_normals, RngStream};
