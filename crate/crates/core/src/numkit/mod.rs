//! Numeric kernels shared by the estimators.

mod diff;
mod dist;
mod matrix;
mod optim;

pub use diff::{
    numeric_gradient, numeric_hessian, numeric_hessian_with_steps, GRADIENT_STEP, HESSIAN_STEP,
};
pub use dist::{
    log_norm_cdf, log_norm_sf, norm_cdf, norm_pdf, norm_quantile, t_cdf, t_quantile, t_two_sided_p,
};
pub(crate) use dist::{std_cdf, std_pdf};
pub use matrix::SymmetricMatrix;
pub use optim::{maximize_bounded, BoxBounds, OptimResult, Tolerances};
