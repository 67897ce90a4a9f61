//! Observed information at a constrained optimum.
//!
//! Both selection-model fits parameterise the correlation ρ inside a box
//! strictly within (−1, 1). When the optimum lands on that box edge the
//! likelihood is still rising towards |ρ| = 1, so ρ is treated as fixed and
//! dropped from the information matrix before inversion. τ always stays: the
//! likelihoods depend on τ only through τ², so probes across τ = 0 are valid.

use crate::error::Result;
use crate::numkit::{numeric_hessian_with_steps, SymmetricMatrix, HESSIAN_STEP};

#[derive(Debug, Clone)]
pub(crate) struct ObservedInfo {
    /// Negative Hessian over the retained parameters.
    pub info: SymmetricMatrix,
    /// Indices of the retained parameters.
    pub kept: Vec<usize>,
    /// `None` when the retained block is not positive definite.
    pub se_theta: Option<f64>,
}

/// `theta_idx` must be 0; `rho_idx` indexes ρ in `x`.
pub(crate) fn observed_information<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    rho_idx: usize,
    rho_max: f64,
) -> Result<ObservedInfo> {
    let rho = x[rho_idx];
    let mut steps: Vec<f64> = x.iter().map(|v| HESSIAN_STEP * v.abs().max(1.0)).collect();
    steps[rho_idx] = steps[rho_idx].min(0.5 * (1.0 - rho.abs()));
    let info = numeric_hessian_with_steps(f, x, &steps)?.scaled(-1.0);
    let rho_fixed = rho.abs() >= rho_max - 1e-7;
    let kept: Vec<usize> = (0..x.len())
        .filter(|&j| !(rho_fixed && j == rho_idx))
        .collect();
    let info = info.submatrix(&kept);
    let se_theta = info
        .inverse_pd()
        .ok()
        .map(|inv| inv.get(0, 0))
        .filter(|v| *v > 0.0)
        .map(f64::sqrt);
    Ok(ObservedInfo {
        info,
        kept,
        se_theta,
    })
}
