//! Dense matrices and the numerical kernels built on them.

mod matrix;
mod stats;
mod svd;

pub use matrix::Matrix;
pub use stats::{column_means, covariance, l2_normalize_rows, NORM_EPS};
pub use svd::{nuclear_norm, svd, SvdFactors, MAX_SWEEPS, TOL};

pub(crate) use matrix::dot;
pub(crate) use stats::{center_columns, row_norms};
