//! Normal and Student-t distribution functions.
//!
//! Every likelihood term and interval bound in the crate goes through these,
//! so the normal CDF is computed from a full-precision `erfc` and the log-CDF
//! switches to an asymptotic tail expansion once the CDF would underflow.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Below this CDF value the direct `ln(Φ)` is replaced by the tail series.
const LOG_CDF_SWITCH: f64 = 1e-300;

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} argument {x}")))
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> Result<f64> {
    finite(x, "norm_pdf")?;
    Ok(std_pdf(x))
}

/// Standard normal CDF, absolute error below 1e-15.
pub fn norm_cdf(x: f64) -> Result<f64> {
    finite(x, "norm_cdf")?;
    Ok(std_cdf(x))
}

#[inline]
pub(crate) fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub(crate) fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
///
/// Infinite arguments map to `0` and `-inf`; NaN propagates.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        return (-std_cdf(-x)).ln_1p();
    }
    let p = std_cdf(x);
    if p >= LOG_CDF_SWITCH {
        return p.ln();
    }
    // Φ(x) = φ(x)/|x| · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸ − …)
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
    -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
}

/// `ln(1 − Φ(x))`.
#[inline]
pub fn log_norm_sf(x: f64) -> f64 {
    log_norm_cdf(-x)
}

/// Inverse of the standard normal CDF.
///
/// A rational initial guess (|error| < 4.5e-4) refined by Halley steps on the
/// lower tail; the upper half is obtained by reflection.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "norm_quantile requires 0 < p < 1, got {p}"
        )));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let t = (-2.0 * p.ln()).sqrt();
    let num = 2.515_517 + t * (0.802_853 + t * 0.010_328);
    let den = 1.0 + t * (1.432_788 + t * (0.189_269 + t * 0.001_308));
    let mut x = -(t - num / den);
    for _ in 0..4 {
        // Halley on Φ(x) − p, relative residual via erfc keeps tails accurate.
        let e = 0.5 * erfc(-x / SQRT_2) - p;
        let u = e / std_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Student-t CDF with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    finite(x, "t_cdf")?;
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::Domain(format!("t_cdf requires df > 0, got {df}")));
    }
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    Ok(if x >= 0.0 { 1.0 - tail } else { tail })
}

/// Two-sided tail probability `P(|T| ≥ |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    finite(t, "t_two_sided_p")?;
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::Domain(format!(
            "t_two_sided_p requires df > 0, got {df}"
        )));
    }
    Ok(beta_reg(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0))
}

fn t_pdf(x: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln();
    (ln_norm - 0.5 * (df + 1.0) * (x * x / df).ln_1p()).exp()
}

/// Inverse Student-t CDF.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "t_quantile requires 0 < p < 1, got {p}"
        )));
    }
    if !(df >= 1.0) || !df.is_finite() {
        return Err(Error::Domain(format!(
            "t_quantile requires df >= 1, got {df}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-upper_t_quantile(1.0 - p, df));
    }
    Ok(upper_t_quantile(p, df))
}

// Safeguarded Newton on the upper half, bracketed by bisection.
fn upper_t_quantile(p: f64, df: f64) -> f64 {
    let cdf = |x: f64| 1.0 - 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    let mut lo = 0.0;
    let mut hi = lower_quantile(1.0 - p).abs().max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - f / t_pdf(x, df);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_reference_values() {
        assert!((norm_pdf(0.0).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert!((norm_pdf(1.0).unwrap() - 0.241_970_724_5).abs() < 1e-10);
        assert_eq!(norm_pdf(-1.0).unwrap(), norm_pdf(1.0).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(norm_pdf(f64::NAN).is_err());
        assert!(norm_cdf(f64::INFINITY).is_err());
        assert!(t_cdf(f64::NAN, 3.0).is_err());
    }

    #[test]
    fn quantile_domain() {
        assert!(norm_quantile(0.0).is_err());
        assert!(norm_quantile(1.0).is_err());
        assert!(norm_quantile(f64::NAN).is_err());
        assert!(t_quantile(0.5, 0.5).is_err());
        assert!(t_quantile(1.2, 3.0).is_err());
        assert_eq!(norm_quantile(0.5).unwrap(), 0.0);
        assert_eq!(t_quantile(0.5, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        // Around the switch point the direct and asymptotic forms must agree.
        let direct = std_cdf(-37.0).ln();
        let x = -37.0_f64;
        let z = 1.0 / (x * x);
        let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
        let asym = -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln();
        assert!((direct - asym).abs() < 1e-9 * direct.abs());
        assert!(log_norm_cdf(-60.0).is_finite());
        assert!(log_norm_cdf(-60.0) < log_norm_cdf(-59.0));
        assert!((log_norm_cdf(40.0)).abs() < 1e-300);
    }

    #[test]
    fn t_cdf_matches_normal_for_huge_df() {
        for &x in &[-2.0, -0.3, 0.0, 1.1, 2.5] {
            assert!((t_cdf(x, 1e6).unwrap() - std_cdf(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn cauchy_quantile_closed_form() {
        // df = 1 is Cauchy: Q(p) = tan(π(p − ½)).
        for &p in &[0.6, 0.9, 0.975, 0.999] {
            let q = t_quantile(p, 1.0).unwrap();
            assert!((q - (PI * (p - 0.5)).tan()).abs() < 1e-9 * q.abs().max(1.0));
        }
    }
}
