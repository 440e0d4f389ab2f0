//! Numerical building blocks used by the estimators.

pub mod kde;
pub mod kernel;
pub mod linalg;
pub mod local_linear;
pub mod logistic;
pub mod spline;
pub mod stats;
pub mod wls;

pub use kde::{
    gaussian_kde, gaussian_kde_weighted, silverman_bandwidth, DensityEstimate, TabulatedDensity,
};
pub use kernel::KernelSpec;
pub use linalg::Matrix;
pub use local_linear::{
    default_bandwidth_grid, local_linear_fit, local_linear_fit_weighted, loo_error,
    select_bandwidth, select_bandwidth_weighted,
};
pub use logistic::{fit_logistic, fit_logistic_weighted, LogisticFit};
pub use wls::{fit_wls, LinearFit};
