//! Finite-difference derivatives.

use super::matrix::SymmetricMatrix;
use crate::error::{Error, Result};

/// Default relative step for gradients.
pub const GRADIENT_STEP: f64 = 1e-5;
/// Default relative step for Hessians.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Number of step halvings combined by Richardson extrapolation.
const RICHARDSON_LEVELS: usize = 4;

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective is {v} at {x:?}")))
    }
}

/// Central-difference gradient with step `step·max(1, |x_j|)`.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let up = eval(&f, &probe)?;
        probe[j] = x[j] - h;
        let down = eval(&f, &probe)?;
        probe[j] = x[j];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Symmetric central-difference Hessian with relative step `step`.
///
/// The central estimate is refined by Richardson extrapolation over successive
/// step halvings, which keeps curvature accurate on sharply curved surfaces.
pub fn numeric_hessian<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    step: f64,
) -> Result<SymmetricMatrix> {
    let steps: Vec<f64> = x.iter().map(|v| step * v.abs().max(1.0)).collect();
    numeric_hessian_with_steps(f, x, &steps)
}

/// As [`numeric_hessian`] but with explicit absolute base steps per coordinate.
pub fn numeric_hessian_with_steps<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    steps: &[f64],
) -> Result<SymmetricMatrix> {
    if steps.len() != x.len() {
        return Err(Error::Domain("one step per coordinate required".into()));
    }
    let f0 = eval(&f, x)?;
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(RICHARDSON_LEVELS);
    let mut scale = 1.0;
    for _ in 0..RICHARDSON_LEVELS {
        let h: Vec<f64> = steps.iter().map(|s| s * scale).collect();
        table.push(central_hessian(&f, x, f0, &h)?);
        scale *= 0.5;
    }
    // Error terms are even in h: eliminate h², h⁴, ... in turn.
    let mut factor = 4.0;
    while table.len() > 1 {
        table = table
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (factor * b - a) / (factor - 1.0))
                    .collect()
            })
            .collect();
        factor *= 4.0;
    }
    let n = x.len();
    let flat = &table[0];
    let rows: Vec<Vec<f64>> = (0..n).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect();
    SymmetricMatrix::from_rows(&rows)
}

fn central_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], f0: f64, h: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    let mut p = x.to_vec();
    for i in 0..n {
        p[i] = x[i] + h[i];
        let up = eval(f, &p)?;
        p[i] = x[i] - h[i];
        let down = eval(f, &p)?;
        p[i] = x[i];
        out[i * n + i] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                p[i] = x[i] + si * h[i];
                p[j] = x[j] + sj * h[j];
                let v = eval(f, &p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_examples() {
        let g = numeric_gradient(|x| x[0] * x[0], &[3.0], GRADIENT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = numeric_gradient(|_| 4.2, &[1.0, -7.0], GRADIENT_STEP).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let g = numeric_gradient(|x| x[0] * x[1], &[2.0, 5.0], GRADIENT_STEP).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_examples() {
        let h = numeric_hessian(|x| x[0] * x[0], &[0.7], HESSIAN_STEP).unwrap();
        assert!((h.get(0, 0) - 2.0).abs() < 1e-4);
        let h = numeric_hessian(|x| x[0] * x[0] + x[1] * x[1], &[1.0, -2.0], HESSIAN_STEP).unwrap();
        assert!((h.get(0, 0) - 2.0).abs() < 1e-4 && (h.get(1, 1) - 2.0).abs() < 1e-4);
        assert!(h.get(0, 1).abs() < 1e-4);
        let h = numeric_hessian(|x| x[0] * x[1], &[0.3, 0.4], HESSIAN_STEP).unwrap();
        assert!(h.get(0, 0).abs() < 1e-4 && h.get(1, 1).abs() < 1e-4);
        assert!((h.get(0, 1) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let r = numeric_gradient(|x| x[0].ln(), &[0.0], GRADIENT_STEP);
        assert!(r.is_err());
        let r = numeric_hessian(|x| (1.0 - x[0]).sqrt(), &[1.0], HESSIAN_STEP);
        assert!(r.is_err());
    }

    #[test]
    fn richardson_handles_stiff_curvature() {
        // exp(50 x) has f'' = 2500 exp(50x); plain h = 1e-4 would be off by ~2e-3 relative.
        let h = numeric_hessian(|x| (50.0 * x[0]).exp(), &[0.0], HESSIAN_STEP).unwrap();
        assert!((h.get(0, 0) - 2500.0).abs() / 2500.0 < 1e-7);
    }
}
