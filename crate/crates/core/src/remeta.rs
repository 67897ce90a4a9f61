//! Unadjusted random-effects meta-analysis and funnel asymmetry tests.

use serde::{Deserialize, Serialize};

use crate::dataset::MetaDataset;
use crate::error::{Error, Result};
use crate::numkit::{norm_quantile, t_quantile, t_two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReMethod {
    #[serde(rename = "REML")]
    Reml,
    #[serde(rename = "ML")]
    Ml,
}

impl std::fmt::Display for ReMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReMethod::Reml => "REML",
            ReMethod::Ml => "ML",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsFit {
    pub theta_hat: f64,
    pub tau2_hat: f64,
    pub se_theta: f64,
    pub k: usize,
    pub method: ReMethod,
    pub iterations: usize,
}

const MAX_SCORING_ITER: usize = 200;

/// Fits the random-effects model to the published studies of `dataset`.
pub fn fit_random_effects(dataset: &MetaDataset, method: ReMethod) -> Result<RandomEffectsFit> {
    fit_effects(&dataset.yi(), &dataset.sei(), method)
}

/// [`fit_random_effects`] on raw effect and standard-error vectors.
///
/// τ² is found by Fisher scoring started at the DerSimonian–Laird estimate
/// and projected onto τ² ≥ 0 after every step.
pub fn fit_effects(y: &[f64], s: &[f64], method: ReMethod) -> Result<RandomEffectsFit> {
    let k = y.len();
    if k < 2 {
        return Err(Error::TooFewStudies {
            needed: 2,
            found: k,
        });
    }
    if s.len() != k {
        return Err(Error::Domain(
            "effects and standard errors differ in length".into(),
        ));
    }
    let v: Vec<f64> = s.iter().map(|s| s * s).collect();

    let w: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let fixed = dot(&w, y) / sw;
    let q: f64 = w.iter().zip(y).map(|(w, y)| w * (y - fixed).powi(2)).sum();
    let c = sw - w.iter().map(|w| w * w).sum::<f64>() / sw;
    let start = if c > 0.0 {
        ((q - (k as f64 - 1.0)) / c).max(0.0)
    } else {
        0.0
    };
    let score_info = |tau2: f64| -> (f64, f64) {
        let w: Vec<f64> = v.iter().map(|v| 1.0 / (v + tau2)).collect();
        let sw: f64 = w.iter().sum();
        let sw2: f64 = w.iter().map(|w| w * w).sum();
        let theta = dot(&w, y) / sw;
        let wr2: f64 = w
            .iter()
            .zip(y)
            .map(|(w, y)| (w * (y - theta)).powi(2))
            .sum();
        match method {
            ReMethod::Reml => {
                let sw3: f64 = w.iter().map(|w| w * w * w).sum();
                (
                    0.5 * (wr2 - (sw - sw2 / sw)),
                    0.5 * (sw2 - 2.0 * sw3 / sw + (sw2 / sw).powi(2)),
                )
            }
            ReMethod::Ml => (0.5 * (wr2 - sw), 0.5 * sw2),
        }
    };

    // The root of the score is bracketed first: zero when the score is
    // nonpositive there, otherwise by doubling. Scoring steps are then kept
    // inside the bracket, with bisection whenever a step leaves it or fails
    // to halve the previous one. Plain scoring can crawl or cycle when a few
    // precise studies dominate the weights.
    let mut iterations = 0;
    let (s0, _) = score_info(0.0);
    if !s0.is_finite() {
        return Err(Error::NonFinite("score of the variance component".into()));
    }
    let mut tau2 = 0.0;
    let mut converged = s0 <= 0.0;
    let (mut lo, mut hi) = (0.0_f64, start.max(1e-4 * v.iter().sum::<f64>() / k as f64));
    while !converged && score_info(hi).0 > 0.0 {
        iterations += 1;
        lo = hi;
        hi *= 2.0;
        if iterations >= MAX_SCORING_ITER || !hi.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                last: hi,
            });
        }
    }
    if !converged {
        tau2 = start.clamp(lo, hi);
    }
    let mut last_step = hi - lo;
    while !converged && iterations < MAX_SCORING_ITER {
        iterations += 1;
        let (score, info) = score_info(tau2);
        if !score.is_finite() {
            break;
        }
        if score > 0.0 {
            lo = tau2;
        } else {
            hi = tau2;
        }
        let mut next = if info > 0.0 {
            tau2 + score / info
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi && (next - tau2).abs() <= 0.5 * last_step) {
            next = 0.5 * (lo + hi);
        }
        last_step = (next - tau2).abs();
        tau2 = next;
        let tol = 1e-12 * tau2.max(1.0);
        converged = last_step <= tol || hi - lo <= tol;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last: tau2,
        });
    }
    let w: Vec<f64> = v.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = w.iter().sum();
    Ok(RandomEffectsFit {
        theta_hat: dot(&w, y) / sw,
        tau2_hat: tau2,
        se_theta: (1.0 / sw).sqrt(),
        k,
        method,
        iterations,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )))
    }
}

/// Two-sided normal quantile for a confidence level.
pub fn z_for(level: f64) -> Result<f64> {
    check_level(level)?;
    norm_quantile(1.0 - (1.0 - level) / 2.0)
}

/// Two-sided Student-t quantile for a confidence level.
pub fn t_for(level: f64, df: usize) -> Result<f64> {
    check_level(level)?;
    t_quantile(1.0 - (1.0 - level) / 2.0, df as f64)
}

/// Wald interval `θ̂ ± z·SE` on the log scale.
pub fn ci_normal(fit: &RandomEffectsFit, level: f64) -> Result<(f64, f64)> {
    let z = z_for(level)?;
    Ok((
        fit.theta_hat - z * fit.se_theta,
        fit.theta_hat + z * fit.se_theta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnappHartung {
    pub lower: f64,
    pub upper: f64,
    pub se_hk: f64,
}

/// Knapp–Hartung interval with t quantiles on k−1 df (no truncation of the
/// rescaling factor at 1).
pub fn ci_knapp_hartung(
    dataset: &MetaDataset,
    fit: &RandomEffectsFit,
    level: f64,
) -> Result<KnappHartung> {
    knapp_hartung_effects(&dataset.yi(), &dataset.sei(), fit, level)
}

pub fn knapp_hartung_effects(
    y: &[f64],
    s: &[f64],
    fit: &RandomEffectsFit,
    level: f64,
) -> Result<KnappHartung> {
    let k = y.len();
    if k < 2 {
        return Err(Error::TooFewStudies {
            needed: 2,
            found: k,
        });
    }
    let t = t_for(level, k - 1)?;
    let w: Vec<f64> = s.iter().map(|s| 1.0 / (fit.tau2_hat + s * s)).collect();
    let sw: f64 = w.iter().sum();
    let q: f64 = w
        .iter()
        .zip(y)
        .map(|(w, y)| w * (y - fit.theta_hat).powi(2))
        .sum();
    let se_hk = (q / ((k as f64 - 1.0) * sw)).sqrt();
    Ok(KnappHartung {
        lower: fit.theta_hat - t * se_hk,
        upper: fit.theta_hat + t * se_hk,
        se_hk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AsymmetryKind {
    Egger,
    Macaskill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
    pub test: AsymmetryKind,
}

/// Egger's regression: `y/s` on `1/s`, t test of the intercept.
pub fn egger_test(dataset: &MetaDataset) -> Result<AsymmetryTest> {
    egger_effects(&dataset.yi(), &dataset.sei())
}

pub fn egger_effects(y: &[f64], s: &[f64]) -> Result<AsymmetryTest> {
    let z: Vec<f64> = y.iter().zip(s).map(|(y, s)| y / s).collect();
    let x: Vec<f64> = s.iter().map(|s| 1.0 / s).collect();
    let w = vec![1.0; y.len()];
    let fit = wls_line(&x, &z, &w)?;
    let t = fit.intercept / fit.var_intercept.sqrt();
    asymmetry(t, fit.df, AsymmetryKind::Egger)
}

/// Macaskill's regression: `y` on total sample size with inverse-variance
/// weights, t test of the slope.
pub fn macaskill_test(dataset: &MetaDataset) -> Result<AsymmetryTest> {
    let n = dataset.published_sizes()?;
    let s = dataset.sei();
    let w: Vec<f64> = s.iter().map(|s| 1.0 / (s * s)).collect();
    let fit = wls_line(&n, &dataset.yi(), &w)?;
    let t = fit.slope / fit.var_slope.sqrt();
    asymmetry(t, fit.df, AsymmetryKind::Macaskill)
}

fn asymmetry(t: f64, df: usize, test: AsymmetryKind) -> Result<AsymmetryTest> {
    let p_value = if t.is_nan() {
        return Err(Error::Domain("regression is degenerate".into()));
    } else if t.is_infinite() {
        0.0
    } else {
        t_two_sided_p(t, df as f64)?
    };
    Ok(AsymmetryTest {
        statistic: t,
        p_value,
        df,
        test,
    })
}

struct LineFit {
    intercept: f64,
    slope: f64,
    var_intercept: f64,
    var_slope: f64,
    df: usize,
}

/// Weighted least squares of `y` on `(1, x)` with residual variance
/// `Σw r² / (k−2)`.
fn wls_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let k = y.len();
    if k < 3 {
        return Err(Error::TooFewStudies {
            needed: 3,
            found: k,
        });
    }
    let sw: f64 = w.iter().sum();
    let xbar = dot(w, x) / sw;
    let ybar = dot(w, y) / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xbar).powi(2)).sum();
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(Error::Domain("regressor has no spread".into()));
    }
    let sxy: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let df = k - 2;
    let rss: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let sigma2 = rss / df as f64;
    Ok(LineFit {
        intercept,
        slope,
        var_intercept: sigma2 * (1.0 / sw + xbar * xbar / sxx),
        var_slope: sigma2 / sxx,
        df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_studies() {
        let fit = fit_effects(&[0.3; 6], &[0.1; 6], ReMethod::Reml).unwrap();
        assert!((fit.theta_hat - 0.3).abs() < 1e-12);
        assert_eq!(fit.tau2_hat, 0.0);
    }

    #[test]
    fn normal_interval_is_symmetric() {
        let fit = RandomEffectsFit {
            theta_hat: 0.0,
            tau2_hat: 0.0,
            se_theta: 0.1,
            k: 5,
            method: ReMethod::Reml,
            iterations: 1,
        };
        let (lo, hi) = ci_normal(&fit, 0.95).unwrap();
        assert!((lo + 0.196).abs() < 1e-3 && (hi - 0.196).abs() < 1e-3);
        let (lo2, hi2) = ci_normal(&fit, 0.999).unwrap();
        assert!(hi2 - lo2 > hi - lo);
        assert!(ci_normal(&fit, 1.0).is_err());
    }

    #[test]
    fn zero_residuals_give_zero_width() {
        let y = [0.2; 4];
        let s = [0.1, 0.2, 0.3, 0.4];
        let fit = fit_effects(&y, &s, ReMethod::Reml).unwrap();
        let hk = knapp_hartung_effects(&y, &s, &fit, 0.95).unwrap();
        assert!(hk.se_hk.abs() < 1e-12 && (hk.upper - hk.lower).abs() < 1e-12);
    }

    #[test]
    fn mirrored_funnel_has_no_asymmetry() {
        let s = [0.1, 0.1, 0.2, 0.2, 0.4, 0.4, 0.8, 0.8];
        let y = [0.15, -0.15, 0.3, -0.3, 0.5, -0.5, 0.9, -0.9];
        let e = egger_effects(&y, &s).unwrap();
        assert!(e.statistic.abs() < 1e-10);
        assert!((e.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn egger_needs_three() {
        assert!(matches!(
            egger_effects(&[0.1, 0.2], &[0.1, 0.2]),
            Err(Error::TooFewStudies { .. })
        ));
    }
}
