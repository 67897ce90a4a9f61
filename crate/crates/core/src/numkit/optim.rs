//! Box-constrained maximisation.
//!
//! The primary engine is a projected BFGS method driven by finite-difference
//! gradients: coordinates pinned at a bound with the gradient pushing outward
//! form the active set and are frozen for the step, the remaining coordinates
//! follow the quasi-Newton direction and the trial point is projected back
//! into the box. When the projected line search stalls the search switches to
//! a clipped Nelder–Mead simplex and then resumes the quasi-Newton phase.

use serde::{Deserialize, Serialize};

use super::SymmetricMatrix;
use crate::error::{Error, Result};

/// Lower and upper limits per coordinate; infinities are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Domain("bounds must have equal lengths".into()));
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::Domain(format!("invalid bounds at {j}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Whether coordinate `j` of `x` sits on (or numerically at) either bound.
    pub fn at_bound(&self, x: &[f64], j: usize) -> bool {
        let eps = |b: f64| 1e-10 * b.abs().max(1.0);
        x[j] - self.lower[j] <= eps(self.lower[j]) || self.upper[j] - x[j] <= eps(self.upper[j])
    }

    fn fixed(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }
}

/// Stopping rules for [`maximize_bounded`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative objective change, scaled by `max(1, |f|)`.
    pub f_tol: f64,
    /// Sup-norm of the projected gradient.
    pub g_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step for gradients.
    pub grad_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            f_tol: 1e-10,
            g_tol: 1e-6,
            max_iter: 500,
            grad_step: super::diff::GRADIENT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Sup-norm of the projected gradient at `point`.
    pub projected_gradient: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const MAX_FALLBACKS: usize = 3;

struct Problem<'a, F> {
    f: &'a F,
    bounds: &'a BoxBounds,
    step: f64,
    /// Richardson-refined gradients, switched on once progress stalls.
    refined: bool,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Problem<'_, F> {
    /// Negated objective; non-finite values become `+inf`.
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = -(self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&mut self, x: &[f64], fx: f64) -> Vec<f64> {
        let coarse = self.differences(x, fx, 1.0);
        if !self.refined {
            return coarse;
        }
        // both formulas carry an O(h²) leading error term
        let fine = self.differences(x, fx, 0.5);
        coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| (4.0 * f - c) / 3.0)
            .collect()
    }

    fn differences(&mut self, x: &[f64], fx: f64, scale: f64) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        let mut p = x.to_vec();
        for j in 0..n {
            if self.bounds.fixed(j) {
                continue;
            }
            let h = scale * self.step * x[j].abs().max(1.0);
            let room_up = self.bounds.upper[j] - x[j];
            let room_down = x[j] - self.bounds.lower[j];
            let probe = |p: &mut Vec<f64>, d: f64, this: &mut Self| {
                p[j] = x[j] + d;
                let v = this.value(p);
                p[j] = x[j];
                v
            };
            if room_up >= h && room_down >= h {
                let up = probe(&mut p, h, self);
                let down = probe(&mut p, -h, self);
                g[j] = match (up.is_finite(), down.is_finite()) {
                    (true, true) => (up - down) / (2.0 * h),
                    (true, false) => (up - fx) / h,
                    (false, true) => (fx - down) / h,
                    _ => f64::NAN,
                };
            } else if room_up >= room_down {
                // second-order forward difference
                let hh = h.min(0.5 * room_up);
                let a = probe(&mut p, hh, self);
                let b = probe(&mut p, 2.0 * hh, self);
                g[j] = (-3.0 * fx + 4.0 * a - b) / (2.0 * hh);
            } else {
                let hh = h.min(0.5 * room_down);
                let a = probe(&mut p, -hh, self);
                let b = probe(&mut p, -2.0 * hh, self);
                g[j] = (3.0 * fx - 4.0 * a + b) / (2.0 * hh);
            }
        }
        g
    }

    fn active(&self, x: &[f64], g: &[f64], j: usize) -> bool {
        let b = self.bounds;
        if b.fixed(j) {
            return true;
        }
        (x[j] - b.lower[j] <= snap_eps(b.lower[j]) && g[j] > 0.0)
            || (b.upper[j] - x[j] <= snap_eps(b.upper[j]) && g[j] < 0.0)
    }

    /// Sup-norm of `x − P(x − g)`.
    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        (0..x.len())
            .filter(|&j| !self.bounds.fixed(j))
            .map(|j| (x[j] - (x[j] - g[j]).clamp(self.bounds.lower[j], self.bounds.upper[j])).abs())
            .fold(0.0, f64::max)
    }

    /// Projects and pulls coordinates within `snap_eps` of a bound onto it.
    fn project_snap(&self, x: &mut [f64]) {
        let b = self.bounds;
        b.project(x);
        for (j, v) in x.iter_mut().enumerate() {
            if *v - b.lower[j] <= snap_eps(b.lower[j]) {
                *v = b.lower[j];
            } else if b.upper[j] - *v <= snap_eps(b.upper[j]) {
                *v = b.upper[j];
            }
        }
    }
}

fn snap_eps(bound: f64) -> f64 {
    1e-9 * bound.abs().clamp(1.0, 1e12)
}

/// Maximises `f` over `bounds` starting from `start`.
///
/// Exhausting the iteration budget is reported through `converged = false`;
/// an objective that is not finite at the (projected) start is an error.
pub fn maximize_bounded<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    bounds: &BoxBounds,
    tol: &Tolerances,
) -> Result<OptimResult> {
    if start.len() != bounds.dim() {
        return Err(Error::Domain(format!(
            "start has {} coordinates, bounds have {}",
            start.len(),
            bounds.dim()
        )));
    }
    let mut x = start.to_vec();
    bounds.project(&mut x);
    let mut prob = Problem {
        f: &f,
        bounds,
        step: tol.grad_step,
        refined: false,
        evals: 0,
    };
    let mut fx = prob.value(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective not finite at start {x:?}"
        )));
    }

    let mut iterations = 0;
    let mut fallbacks = 0;
    let converged = loop {
        let phase = quasi_newton(&mut prob, &mut x, &mut fx, tol, &mut iterations);
        match phase {
            Phase::Converged => break true,
            Phase::Budget => break false,
            Phase::Stalled if fallbacks >= MAX_FALLBACKS || iterations >= tol.max_iter => {
                break false
            }
            Phase::Stalled => {
                fallbacks += 1;
                let budget = 200 * (x.len() + 1);
                nelder_mead(&mut prob, &mut x, &mut fx, budget, &mut iterations);
            }
        }
    };
    let g = prob.gradient(&x, fx);
    let pg = prob.projected_gradient_norm(&x, &g);
    Ok(OptimResult {
        point: x,
        value: -fx,
        converged,
        iterations,
        evaluations: prob.evals,
        projected_gradient: pg,
    })
}

enum Phase {
    Converged,
    Stalled,
    Budget,
}

fn quasi_newton<F: Fn(&[f64]) -> f64>(
    prob: &mut Problem<'_, F>,
    x: &mut Vec<f64>,
    fx: &mut f64,
    tol: &Tolerances,
    iterations: &mut usize,
) -> Phase {
    let n = x.len();
    let mut h = identity(n);
    let mut scaled = false;
    let mut g = prob.gradient(x, *fx);
    let mut last_change = f64::INFINITY;

    while *iterations < tol.max_iter {
        if g.iter().any(|v| !v.is_finite()) {
            return Phase::Stalled;
        }
        let pg = prob.projected_gradient_norm(x, &g);
        let f_scale = tol.f_tol * fx.abs().max(1.0);
        if pg < tol.g_tol && last_change < f_scale {
            return Phase::Converged;
        }
        if last_change < f_scale && !prob.refined {
            prob.refined = true;
            g = prob.gradient(x, *fx);
            continue;
        }
        *iterations += 1;
        let free: Vec<bool> = (0..n).map(|j| !prob.active(x, &g, j)).collect();
        let slope_of = |d: &[f64]| d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let mut d = direction(&h, &g, &free).unwrap_or_default();
        if !(slope_of(&d) < 0.0) {
            h = identity(n);
            scaled = false;
            d = (0..n).map(|j| if free[j] { -g[j] } else { 0.0 }).collect();
            if !(slope_of(&d) < 0.0) {
                // projected gradient vanished on the free set
                return if pg < tol.g_tol {
                    Phase::Converged
                } else {
                    Phase::Stalled
                };
            }
        }
        let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut alpha = if scaled { 1.0 } else { (1.0 / dmax).min(1.0) };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            prob.project_snap(&mut xn);
            let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            let fnew = prob.value(&xn);
            let decrease: f64 = g.iter().zip(&s).map(|(a, b)| a * b).sum();
            let ok = if decrease < 0.0 {
                fnew <= *fx + ARMIJO * decrease
            } else {
                fnew < *fx
            };
            if ok {
                accepted = Some((xn, fnew, s));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, s)) = accepted else {
            if pg < tol.g_tol {
                return Phase::Converged;
            }
            if !prob.refined {
                prob.refined = true;
                g = prob.gradient(x, *fx);
                continue;
            }
            return Phase::Stalled;
        };

        let gn = prob.gradient(&xn, fnew);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-10 * (ss * yy).sqrt() && yy.is_finite() {
            if !scaled {
                let gamma = yy / sy;
                h.iter_mut().flatten().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        last_change = (*fx - fnew).abs();
        *x = xn;
        *fx = fnew;
        g = gn;
    }
    Phase::Budget
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Solves `B_ff d_f = −g_f` on the free coordinates; `None` if the reduced
/// model is not positive definite.
fn direction(b: &[Vec<f64>], g: &[f64], free: &[bool]) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..g.len()).filter(|&j| free[j]).collect();
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| b[i][j]).collect())
        .collect();
    let reduced = SymmetricMatrix::from_rows(&rows).ok()?;
    let inv = reduced.inverse_pd().ok()?;
    let mut d = vec![0.0; g.len()];
    for (a, &i) in idx.iter().enumerate() {
        d[i] = -idx
            .iter()
            .enumerate()
            .map(|(c, &j)| inv.get(a, c) * g[j])
            .sum::<f64>();
    }
    Some(d)
}

// B ← B − B s sᵀ B / sᵀBs + y yᵀ / sᵀy
fn bfgs_update(b: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let bs: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| b[i][j] * s[j]).sum())
        .collect();
    let sbs: f64 = s.iter().zip(&bs).map(|(a, b)| a * b).sum();
    if !(sbs > 0.0) {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i][j] += y[i] * y[j] / sy - bs[i] * bs[j] / sbs;
        }
    }
}

/// Clipped Nelder–Mead on the free coordinates, minimising `prob.value`.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    prob: &mut Problem<'_, F>,
    x: &mut Vec<f64>,
    fx: &mut f64,
    max_evals: usize,
    iterations: &mut usize,
) {
    let free: Vec<usize> = (0..x.len()).filter(|&j| !prob.bounds.fixed(j)).collect();
    if free.is_empty() {
        return;
    }
    let start_evals = prob.evals;
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x.clone(), *fx)];
    for &j in &free {
        let mut v = x.clone();
        let delta = 0.05 * x[j].abs().max(1.0);
        v[j] += if x[j] + delta <= prob.bounds.upper[j] {
            delta
        } else {
            -delta
        };
        prob.bounds.project(&mut v);
        let fv = prob.value(&v);
        simplex.push((v, fv));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64, bounds: &BoxBounds| {
        let mut p: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
        bounds.project(&mut p);
        p
    };
    while prob.evals - start_evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[simplex.len() - 1].1;
        if (worst - best).abs() <= 1e-13 * best.abs().max(1.0) {
            break;
        }
        *iterations += 1;
        let m = simplex.len() - 1;
        let mut centroid = vec![0.0; x.len()];
        for (v, _) in &simplex[..m] {
            centroid
                .iter_mut()
                .zip(v)
                .for_each(|(c, a)| *c += a / m as f64);
        }
        let worst_pt = simplex[m].0.clone();
        let refl = lerp(&worst_pt, &centroid, 2.0, prob.bounds);
        let fr = prob.value(&refl);
        if fr < simplex[0].1 {
            let exp = lerp(&worst_pt, &centroid, 3.0, prob.bounds);
            let fe = prob.value(&exp);
            simplex[m] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[m - 1].1 {
            simplex[m] = (refl, fr);
        } else {
            let (towards, ft) = if fr < simplex[m].1 {
                (refl, fr)
            } else {
                (worst_pt.clone(), simplex[m].1)
            };
            let con = lerp(&towards, &centroid, 0.5, prob.bounds);
            let fc = prob.value(&con);
            if fc < ft {
                simplex[m] = (con, fc);
            } else {
                let best_pt = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let p = lerp(&best_pt, &vertex.0, 0.5, prob.bounds);
                    let fp = prob.value(&p);
                    *vertex = (p, fp);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    if simplex[0].1 <= *fx {
        *x = simplex[0].0.clone();
        *fx = simplex[0].1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn interior_quadratic() {
        let b = BoxBounds::new(vec![0.0], vec![5.0]).unwrap();
        let r = maximize_bounded(|x| -(x[0] - 2.0).powi(2), &[0.0], &b, &tol()).unwrap();
        assert!(r.converged);
        assert!((r.point[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn boundary_solution() {
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let r = maximize_bounded(|x| x[0], &[0.5], &b, &tol()).unwrap();
        assert!(r.converged);
        assert_eq!(r.point[0], 1.0);
    }

    #[test]
    fn anisotropic_quadratic() {
        let b = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let r = maximize_bounded(
            |x| -(x[0] - 1.0).powi(2) - 10.0 * (x[1] + 3.0).powi(2),
            &[0.0, 0.0],
            &b,
            &tol(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.point[0] - 1.0).abs() < 1e-5 && (r.point[1] + 3.0).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock_in_a_box() {
        let b = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let r = maximize_bounded(
            |x| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
            &[-1.2, 1.0],
            &b,
            &tol(),
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.point[0] - 1.0).abs() < 1e-4 && (r.point[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn fixed_coordinate_stays_put() {
        let b = BoxBounds::new(vec![-1.0, 0.3], vec![1.0, 0.3]).unwrap();
        let r =
            maximize_bounded(|x| -(x[0] - 0.5).powi(2) - x[1], &[0.0, 0.3], &b, &tol()).unwrap();
        assert!(r.converged);
        assert_eq!(r.point[1], 0.3);
        assert!((r.point[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_start_is_error() {
        let b = BoxBounds::unbounded(1);
        assert!(maximize_bounded(|x| x[0].ln(), &[-1.0], &b, &tol()).is_err());
    }

    #[test]
    fn budget_exhaustion_is_not_an_error() {
        let b = BoxBounds::unbounded(2);
        let t = Tolerances {
            max_iter: 2,
            ..Tolerances::default()
        };
        let r = maximize_bounded(
            |x| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
            &[-1.2, 1.0],
            &b,
            &t,
        )
        .unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn undefined_region_inside_box_is_avoided() {
        // log is undefined left of zero; the box allows it.
        let b = BoxBounds::new(vec![-3.0], vec![10.0]).unwrap();
        let r = maximize_bounded(|x| x[0].ln() - x[0], &[4.0], &b, &tol()).unwrap();
        assert!(r.converged);
        assert!((r.point[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(BoxBounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxBounds::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}
