//! Sensitivity analysis with the conditional (published-only) likelihood.
//!
//! The selection parameters `(α₀, α₁)` cannot be estimated from published
//! studies alone, so they are fixed on a grid and `(θ, τ, ρ)` is fitted at
//! each grid point. Each point is labelled by the number of studies the
//! selection model implies went unpublished, and a residual goodness-of-fit
//! screen picks the least selection that explains the funnel asymmetry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MetaDataset;
use crate::error::{Error, Result};
use crate::numkit::{
    log_norm_cdf, maximize_bounded, norm_quantile, std_cdf, std_pdf, BoxBounds, Tolerances,
};
use crate::observed::observed_information;
use crate::remeta::{egger_effects, fit_effects, ReMethod};

pub const TAU_MAX: f64 = 5.0;
pub const RHO_MAX: f64 = 0.9999;

/// Fixed selection parameters: P(published | s) = Φ(α₀ + α₁/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub alpha0: f64,
    pub alpha1: f64,
}

impl Alphas {
    pub fn new(alpha0: f64, alpha1: f64) -> Self {
        Self { alpha0, alpha1 }
    }

    /// Selection index `α₀ + α₁/s`.
    pub fn index(&self, s: f64) -> f64 {
        self.alpha0 + self.alpha1 / s
    }

    /// Solves Φ(α₀+α₁/s_max) = p_low and Φ(α₀+α₁/s_min) = p_high.
    pub fn from_anchors(p_low: f64, p_high: f64, s_min: f64, s_max: f64) -> Result<Self> {
        let z_low = norm_quantile(p_low)?;
        let z_high = norm_quantile(p_high)?;
        let spread = 1.0 / s_min - 1.0 / s_max;
        if !(spread > 0.0) {
            // all standard errors equal: only the intercept is identified
            return Ok(Self::new(z_low, 0.0));
        }
        let alpha1 = (z_high - z_low) / spread;
        Ok(Self::new(z_low - alpha1 / s_max, alpha1))
    }
}

/// The standardised selection index of a published study under correlation ρ.
pub fn conditional_v(theta: f64, tau: f64, rho: f64, alphas: Alphas, y: f64, s: f64) -> f64 {
    let v = tau * tau + s * s;
    let u = alphas.index(s);
    (u + rho * s * (y - theta) / v) / (1.0 - rho * rho * s * s / v).sqrt()
}

struct CondLik<'a> {
    y: &'a [f64],
    s: &'a [f64],
    u: Vec<f64>,
    sum_log_pu: f64,
}

impl<'a> CondLik<'a> {
    fn new(alphas: Alphas, y: &'a [f64], s: &'a [f64]) -> Self {
        let u: Vec<f64> = s.iter().map(|s| alphas.index(*s)).collect();
        let sum_log_pu = u.iter().map(|u| log_norm_cdf(*u)).sum();
        Self {
            y,
            s,
            u,
            sum_log_pu,
        }
    }

    fn eval(&self, p: &[f64]) -> f64 {
        let (theta, tau, rho) = (p[0], p[1], p[2]);
        if !(rho.abs() < 1.0) {
            return f64::NEG_INFINITY;
        }
        let t2 = tau * tau;
        let mut acc = -self.sum_log_pu;
        for ((y, s), u) in self.y.iter().zip(self.s).zip(&self.u) {
            let v = t2 + s * s;
            let r = y - theta;
            let rs = rho * s;
            let vi = (u + rs * r / v) / (1.0 - rs * rs / v).sqrt();
            acc += -0.5 * v.ln() - r * r / (2.0 * v) + log_norm_cdf(vi);
        }
        acc
    }
}

/// `log φ(x) − log Φ(x)`, exponentiated: the inverse Mills ratio.
pub(crate) fn mills(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - log_norm_cdf(x)).exp()
}

/// Gradient of one published study's term `−½log v − r²/2v + log Φ(V)`
/// with respect to `(θ, τ, ρ)`, together with `∂/∂u` of the same term.
pub(crate) fn published_term_gradient(
    theta: f64,
    tau: f64,
    rho: f64,
    u: f64,
    y: f64,
    s: f64,
) -> ([f64; 3], f64) {
    let v = tau * tau + s * s;
    let r = y - theta;
    let rs = rho * s;
    let d = (1.0 - rs * rs / v).sqrt();
    let a = u + rs * r / v;
    let lam = mills(a / d);
    // V = A / D; derivatives of A and D with respect to θ, v and ρ.
    let dv_theta = -rs / (v * d);
    let dv_v = (-rs * r / (v * v)) / d - a * (rs * rs / (v * v)) / (2.0 * d * d * d);
    let dv_rho = (s * r / v) / d + a * (rho * s * s / v) / (d * d * d);
    let dl_v = -0.5 / v + r * r / (2.0 * v * v) + lam * dv_v;
    (
        [r / v + lam * dv_theta, dl_v * 2.0 * tau, lam * dv_rho],
        lam / d,
    )
}

/// Conditional log-likelihood of the published studies given publication,
/// without additive constants. `params` is `(θ, τ, ρ)`.
pub fn cond_loglik(params: [f64; 3], alphas: Alphas, dataset: &MetaDataset) -> f64 {
    cond_loglik_effects(params, alphas, &dataset.yi(), &dataset.sei())
}

pub fn cond_loglik_effects(params: [f64; 3], alphas: Alphas, y: &[f64], s: &[f64]) -> f64 {
    CondLik::new(alphas, y, s).eval(&params)
}

/// Analytic gradient of [`cond_loglik_effects`] with respect to `(θ, τ, ρ)`.
pub fn cond_loglik_gradient(params: [f64; 3], alphas: Alphas, y: &[f64], s: &[f64]) -> [f64; 3] {
    let [theta, tau, rho] = params;
    let mut g = [0.0; 3];
    for (y, s) in y.iter().zip(s) {
        let (gi, _) = published_term_gradient(theta, tau, rho, alphas.index(*s), *y, *s);
        g.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
    }
    g
}

/// Expected number of unpublished studies, Σ (1 − pᵢ)/pᵢ with pᵢ = Φ(α₀+α₁/sᵢ).
pub fn expected_unpublished(alphas: Alphas, dataset: &MetaDataset) -> f64 {
    expected_unpublished_se(alphas, &dataset.sei())
}

pub fn expected_unpublished_se(alphas: Alphas, s: &[f64]) -> f64 {
    s.iter()
        .map(|s| {
            let p = std_cdf(alphas.index(*s));
            if p > 0.0 {
                std_cdf(-alphas.index(*s)) / p
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub alpha0: f64,
    pub alpha1: f64,
    /// Publication probability at the largest standard error, when the point
    /// came from an anchored grid.
    pub p_low: Option<f64>,
    pub theta_hat: f64,
    pub tau_hat: f64,
    pub rho_hat: f64,
    pub se_theta: Option<f64>,
    pub expected_m: f64,
    pub gof_p: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
}

impl SensitivityPoint {
    pub fn alphas(&self) -> Alphas {
        Alphas::new(self.alpha0, self.alpha1)
    }

    /// Wald interval for θ, `None` without a standard error.
    pub fn ci(&self, z: f64) -> Option<(f64, f64)> {
        self.se_theta
            .map(|se| (self.theta_hat - z * se, self.theta_hat + z * se))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Ladder of publication probabilities at the largest standard error.
    pub p_low: Vec<f64>,
    /// Publication probability at the smallest standard error.
    pub p_high: f64,
    /// Points with a goodness-of-fit p above this are acceptable.
    pub gof_threshold: f64,
    /// Starting values of ρ; θ and τ start from the ML random-effects fit.
    pub rho_starts: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            p_low: (0..=79).map(|i| (99 - i) as f64 / 100.0).collect(),
            p_high: 0.9999,
            gof_threshold: 0.1,
            rho_starts: vec![0.0, -0.5, 0.5],
        }
    }
}

impl GridConfig {
    fn check(&self) -> Result<()> {
        if self.p_low.is_empty() || self.rho_starts.is_empty() {
            return Err(Error::Domain(
                "grid needs at least one anchor and one ρ start".into(),
            ));
        }
        let ok = |p: f64| p > 0.0 && p < 1.0;
        if !ok(self.p_high) || self.p_low.iter().any(|&p| !ok(p) || p > self.p_high) {
            return Err(Error::Domain(
                "grid anchors must satisfy 0 < p_low ≤ p_high < 1".into(),
            ));
        }
        if self.rho_starts.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::Domain("ρ starts must lie in (−1, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub points: Vec<SensitivityPoint>,
    pub selected: Option<usize>,
    /// True when no point passed the goodness-of-fit screen and the selection
    /// fell back to the largest-M converged point.
    pub fallback: bool,
}

impl SensitivityCurve {
    pub fn selected_point(&self) -> Option<&SensitivityPoint> {
        self.selected.map(|i| &self.points[i])
    }
}

struct Published {
    y: Vec<f64>,
    s: Vec<f64>,
    theta0: f64,
    tau0: f64,
}

impl Published {
    fn new(y: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        let ml = fit_effects(&y, &s, ReMethod::Ml)?;
        Ok(Self {
            theta0: ml.theta_hat,
            tau0: ml.tau2_hat.sqrt(),
            y,
            s,
        })
    }

    fn from_dataset(dataset: &MetaDataset) -> Result<Self> {
        Self::new(dataset.yi(), dataset.sei())
    }

    fn s_range(&self) -> (f64, f64) {
        let lo = self.s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.s.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }
}

/// Maximises the conditional likelihood over `(θ, τ, ρ)` at fixed `alphas`.
pub fn fit_conditional(alphas: Alphas, dataset: &MetaDataset) -> Result<SensitivityPoint> {
    let data = Published::from_dataset(dataset)?;
    fit_point(&data, alphas, None, &GridConfig::default().rho_starts)
}

fn fit_point(
    data: &Published,
    alphas: Alphas,
    p_low: Option<f64>,
    rho_starts: &[f64],
) -> Result<SensitivityPoint> {
    let lik = CondLik::new(alphas, &data.y, &data.s);
    let bounds = BoxBounds::new(
        vec![f64::NEG_INFINITY, 0.0, -RHO_MAX],
        vec![f64::INFINITY, TAU_MAX, RHO_MAX],
    )?;
    let tol = Tolerances::default();
    let mut best: Option<crate::numkit::OptimResult> = None;
    for &rho in rho_starts {
        let start = [data.theta0, data.tau0.min(TAU_MAX), rho];
        let Ok(res) = maximize_bounded(|p| lik.eval(p), &start, &bounds, &tol) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| res.value > b.value) {
            best = Some(res);
        }
    }
    let best =
        best.ok_or_else(|| Error::NotConverged("no start gave a finite likelihood".into()))?;
    let (theta, tau, rho) = (best.point[0], best.point[1], best.point[2]);
    let se = observed_information(|p| lik.eval(p), &best.point, 2, RHO_MAX)
        .ok()
        .and_then(|o| o.se_theta);
    let converged = best.converged && se.is_some();
    let mut point = SensitivityPoint {
        alpha0: alphas.alpha0,
        alpha1: alphas.alpha1,
        p_low,
        theta_hat: theta,
        tau_hat: tau,
        rho_hat: rho,
        se_theta: se,
        expected_m: expected_unpublished_se(alphas, &data.s),
        gof_p: None,
        loglik: best.value,
        converged,
    };
    if converged {
        point.gof_p = gof_effects(&point, &data.y, &data.s).ok();
    }
    Ok(point)
}

/// Goodness of fit of a fitted point: residuals of the published effects
/// around their selection-adjusted conditional means, standardised by the
/// conditional standard deviations, are tested for remaining small-study
/// asymmetry with the Egger intercept test. Returns the two-sided p.
pub fn residual_gof_p(point: &SensitivityPoint, dataset: &MetaDataset) -> Result<f64> {
    gof_effects(point, &dataset.yi(), &dataset.sei())
}

fn gof_effects(point: &SensitivityPoint, y: &[f64], s: &[f64]) -> Result<f64> {
    let alphas = point.alphas();
    let (theta, t2, rho) = (
        point.theta_hat,
        point.tau_hat * point.tau_hat,
        point.rho_hat,
    );
    let mut resid = Vec::with_capacity(y.len());
    let mut sd = Vec::with_capacity(y.len());
    for (y, s) in y.iter().zip(s) {
        let u = alphas.index(*s);
        // inverse Mills ratio φ(u)/Φ(u), via logs to survive the far tail
        let lambda = (std_pdf(u).ln() - log_norm_cdf(u)).exp();
        let mean = theta + rho * s * lambda;
        let var = t2 + s * s - (rho * s).powi(2) * lambda * (lambda + u);
        if !(var > 0.0) || !mean.is_finite() {
            return Err(Error::NonFinite("conditional moments undefined".into()));
        }
        resid.push(y - mean);
        sd.push(var.sqrt());
    }
    Ok(egger_effects(&resid, &sd)?.p_value)
}

fn anchored_alphas(data: &Published, config: &GridConfig) -> Result<Vec<(f64, Alphas)>> {
    let (s_min, s_max) = data.s_range();
    let mut ladder = config.p_low.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    ladder.dedup();
    ladder
        .into_iter()
        .map(|p| Ok((p, Alphas::from_anchors(p, config.p_high, s_min, s_max)?)))
        .collect()
}

/// Fits every grid point, orders the curve by expected M and applies the
/// selection rule.
pub fn run_grid(dataset: &MetaDataset, config: &GridConfig) -> Result<SensitivityCurve> {
    config.check()?;
    let data = Published::from_dataset(dataset)?;
    let grid = anchored_alphas(&data, config)?;
    let mut points = grid
        .par_iter()
        .map(|(p, a)| fit_point(&data, *a, Some(*p), &config.rho_starts))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.expected_m.total_cmp(&b.expected_m));
    if !points.iter().any(|p| p.converged) {
        return Err(Error::NotConverged("no grid point converged".into()));
    }
    let passing = points
        .iter()
        .position(|p| p.converged && p.gof_p.is_some_and(|g| g > config.gof_threshold));
    let (selected, fallback) = match passing {
        Some(i) => (Some(i), false),
        None => (points.iter().rposition(|p| p.converged), true),
    };
    Ok(SensitivityCurve {
        points,
        selected,
        fallback,
    })
}

/// The selected point only, fitting grid points in order of increasing M and
/// stopping at the first one that passes the screen. Equivalent to
/// `run_grid(..).selected_point()` but much cheaper inside simulations.
pub fn select_point(y: &[f64], s: &[f64], config: &GridConfig) -> Result<(SensitivityPoint, bool)> {
    config.check()?;
    let data = Published::new(y.to_vec(), s.to_vec())?;
    let mut grid = anchored_alphas(&data, config)?;
    grid.sort_by(|a, b| {
        expected_unpublished_se(a.1, &data.s).total_cmp(&expected_unpublished_se(b.1, &data.s))
    });
    let mut last_converged = None;
    for (p, a) in grid {
        let point = fit_point(&data, a, Some(p), &config.rho_starts)?;
        if point.converged {
            if point.gof_p.is_some_and(|g| g > config.gof_threshold) {
                return Ok((point, false));
            }
            last_converged = Some(point);
        }
    }
    last_converged
        .map(|p| (p, true))
        .ok_or_else(|| Error::NotConverged("no grid point converged".into()))
}
