//! Full maximum likelihood with registry-identified unpublished studies.
//!
//! When a trial registry reveals which studies were run but never reported,
//! their planned sample sizes identify the selection model. All five
//! parameters `(θ, τ, ρ, α₀, α₁)` are then estimated jointly, with
//! publication probability `Φ(α₀ + α₁√n)`.

use serde::{Deserialize, Serialize};

use crate::dataset::MetaDataset;
use crate::error::{Error, Result};
use crate::numkit::{
    log_norm_cdf, maximize_bounded, norm_quantile, BoxBounds, OptimResult, SymmetricMatrix,
    Tolerances,
};
use crate::observed::observed_information;
use crate::remeta::{fit_effects, t_for, z_for, ReMethod};
use crate::sensitivity::{mills, published_term_gradient};

/// Parameter order used by every vector in this module.
pub const PARAM_NAMES: [&str; 5] = ["theta", "tau", "rho", "alpha0", "alpha1"];
pub const LOWER: [f64; 5] = [-10.0, 1e-8, -0.9999, -20.0, -5.0];
pub const UPPER: [f64; 5] = [10.0, 5.0, 0.9999, 20.0, 5.0];

/// Published effects with their sizes, plus sizes of the unpublished studies.
#[derive(Debug, Clone)]
pub struct RegistryData {
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub n_published: Vec<f64>,
    pub n_unpublished: Vec<f64>,
}

impl RegistryData {
    pub fn from_dataset(dataset: &MetaDataset) -> Result<Self> {
        Ok(Self {
            y: dataset.yi(),
            s: dataset.sei(),
            n_published: dataset.published_sizes()?,
            n_unpublished: dataset.unpublished_sizes(),
        })
    }

    fn likelihood(&self) -> FullLik<'_> {
        FullLik {
            data: self,
            sqrt_pub: self.n_published.iter().map(|n| n.sqrt()).collect(),
            sqrt_unpub: self.n_unpublished.iter().map(|n| n.sqrt()).collect(),
        }
    }
}

struct FullLik<'a> {
    data: &'a RegistryData,
    sqrt_pub: Vec<f64>,
    sqrt_unpub: Vec<f64>,
}

impl FullLik<'_> {
    fn eval(&self, p: &[f64]) -> f64 {
        let (theta, tau, rho, a0, a1) = (p[0], p[1], p[2], p[3], p[4]);
        if !(rho.abs() < 1.0) {
            return f64::NEG_INFINITY;
        }
        let t2 = tau * tau;
        let mut acc = 0.0;
        for ((y, s), rn) in self.data.y.iter().zip(&self.data.s).zip(&self.sqrt_pub) {
            let v = t2 + s * s;
            let r = y - theta;
            let rs = rho * s;
            let vt = (a0 + a1 * rn + rs * r / v) / (1.0 - rs * rs / v).sqrt();
            acc += -0.5 * v.ln() - r * r / (2.0 * v) + log_norm_cdf(vt);
        }
        for rn in &self.sqrt_unpub {
            acc += log_norm_cdf(-(a0 + a1 * rn));
        }
        acc
    }
}

/// Full log-likelihood without additive constants; `params` follows
/// [`PARAM_NAMES`].
pub fn full_loglik(params: [f64; 5], dataset: &MetaDataset) -> Result<f64> {
    Ok(RegistryData::from_dataset(dataset)?
        .likelihood()
        .eval(&params))
}

pub fn full_loglik_data(params: [f64; 5], data: &RegistryData) -> f64 {
    data.likelihood().eval(&params)
}

/// Analytic gradient of [`full_loglik_data`], ordered as [`PARAM_NAMES`].
pub fn full_loglik_gradient(params: [f64; 5], data: &RegistryData) -> [f64; 5] {
    let [theta, tau, rho, a0, a1] = params;
    let mut g = [0.0; 5];
    for ((y, s), n) in data.y.iter().zip(&data.s).zip(&data.n_published) {
        let rn = n.sqrt();
        let (gi, du) = published_term_gradient(theta, tau, rho, a0 + a1 * rn, *y, *s);
        g[..3].iter_mut().zip(gi).for_each(|(a, b)| *a += b);
        g[3] += du;
        g[4] += du * rn;
    }
    for n in &data.n_unpublished {
        let rn = n.sqrt();
        let lam = mills(-(a0 + a1 * rn));
        g[3] -= lam;
        g[4] -= lam * rn;
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub rho_starts: Vec<f64>,
    pub tolerances: Tolerances,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            rho_starts: vec![-0.8, -0.4, 0.0, 0.4, 0.8],
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopasRegistryFit {
    pub theta: f64,
    pub tau: f64,
    pub rho: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Observed information over the parameters in `info_params`; ρ is left
    /// out when it sits on its bound.
    pub info: SymmetricMatrix,
    pub info_params: Vec<String>,
    pub se_theta: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n_published: usize,
    pub n_unpublished: usize,
    /// Why the fit is flagged as not converged; empty when converged.
    pub diagnostics: Vec<String>,
}

impl CopasRegistryFit {
    pub fn params(&self) -> [f64; 5] {
        [self.theta, self.tau, self.rho, self.alpha0, self.alpha1]
    }
}

/// Probit regression of publication on √n over all studies, used to start
/// the selection parameters. Falls back to a flat model when the fit
/// separates (for instance when no study is unpublished).
pub fn probit_start(data: &RegistryData) -> (f64, f64) {
    let k = (data.n_published.len() + data.n_unpublished.len()) as f64;
    let share = (data.n_published.len() as f64 + 0.5) / (k + 1.0);
    let flat = (norm_quantile(share).unwrap_or(0.0), 0.0);
    if data.n_unpublished.is_empty() {
        return flat;
    }
    let pubs: Vec<f64> = data.n_published.iter().map(|n| n.sqrt()).collect();
    let unpubs: Vec<f64> = data.n_unpublished.iter().map(|n| n.sqrt()).collect();
    let ll = |b: &[f64]| {
        pubs.iter()
            .map(|x| log_norm_cdf(b[0] + b[1] * x))
            .sum::<f64>()
            + unpubs
                .iter()
                .map(|x| log_norm_cdf(-(b[0] + b[1] * x)))
                .sum::<f64>()
    };
    let bounds = BoxBounds::new(LOWER[3..].to_vec(), UPPER[3..].to_vec()).expect("static bounds");
    match maximize_bounded(ll, &[flat.0, 0.0], &bounds, &Tolerances::default()) {
        Ok(r) if (0..2).all(|j| !bounds.at_bound(&r.point, j)) => (r.point[0], r.point[1]),
        _ => flat,
    }
}

/// Joint maximum likelihood over `(θ, τ, ρ, α₀, α₁)`.
///
/// Returns `Ok` with `converged = false` when every start fails or the
/// optimum is unusable; errors are reserved for invalid input.
pub fn fit_full_mle(dataset: &MetaDataset, config: &RegistryConfig) -> Result<CopasRegistryFit> {
    fit_full_mle_data(&RegistryData::from_dataset(dataset)?, config)
}

pub fn fit_full_mle_data(data: &RegistryData, config: &RegistryConfig) -> Result<CopasRegistryFit> {
    let n_pub = data.y.len();
    if n_pub < 2 {
        return Err(Error::TooFewStudies {
            needed: 2,
            found: n_pub,
        });
    }
    if config.rho_starts.is_empty() || config.rho_starts.iter().any(|r| !(r.abs() < 1.0)) {
        return Err(Error::Domain(
            "ρ starts must be non-empty and inside (−1, 1)".into(),
        ));
    }
    let reml = fit_effects(&data.y, &data.s, ReMethod::Reml)?;
    let (a0, a1) = probit_start(data);
    let bounds = BoxBounds::new(LOWER.to_vec(), UPPER.to_vec())?;
    let lik = data.likelihood();

    let mut best: Option<OptimResult> = None;
    for &rho in &config.rho_starts {
        let mut start = [reml.theta_hat, reml.tau2_hat.sqrt().max(0.05), rho, a0, a1];
        bounds.project(&mut start);
        let Ok(res) = maximize_bounded(|p| lik.eval(p), &start, &bounds, &config.tolerances) else {
            continue;
        };
        // converged starts beat non-converged ones; then higher loglik; ties keep the earlier start
        let better = match &best {
            None => true,
            Some(b) => (res.converged, res.value) > (b.converged, b.value),
        };
        if better {
            best = Some(res);
        }
    }

    let mut diagnostics = Vec::new();
    let Some(best) = best else {
        return Ok(CopasRegistryFit {
            theta: f64::NAN,
            tau: f64::NAN,
            rho: f64::NAN,
            alpha0: f64::NAN,
            alpha1: f64::NAN,
            info: SymmetricMatrix::zeros(0),
            info_params: Vec::new(),
            se_theta: None,
            loglik: f64::NEG_INFINITY,
            converged: false,
            n_published: n_pub,
            n_unpublished: data.n_unpublished.len(),
            diagnostics: vec!["likelihood not finite at any start".into()],
        });
    };
    let x = best.point.clone();
    if !best.converged {
        diagnostics.push(format!(
            "optimizer stopped after {} iterations",
            best.iterations
        ));
    }
    for j in [0, 3, 4] {
        if bounds.at_bound(&x, j) {
            diagnostics.push(format!("{} on its box bound ({})", PARAM_NAMES[j], x[j]));
        }
    }
    let (info, info_params, se_theta) = match observed_information(|p| lik.eval(p), &x, 2, UPPER[2])
    {
        Ok(o) => {
            let names = o.kept.iter().map(|&j| PARAM_NAMES[j].to_string()).collect();
            (o.info, names, o.se_theta)
        }
        Err(e) => {
            diagnostics.push(format!("observed information unavailable: {e}"));
            (SymmetricMatrix::zeros(0), Vec::new(), None)
        }
    };
    if se_theta.is_none() && !info_params.is_empty() {
        diagnostics.push("observed information is not positive definite".into());
    }
    Ok(CopasRegistryFit {
        theta: x[0],
        tau: x[1],
        rho: x[2],
        alpha0: x[3],
        alpha1: x[4],
        info,
        info_params,
        se_theta,
        loglik: best.value,
        converged: diagnostics.is_empty(),
        n_published: n_pub,
        n_unpublished: data.n_unpublished.len(),
        diagnostics,
    })
}

/// The three intervals for θ, on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIBundle {
    pub normal: (f64, f64),
    pub t: (f64, f64),
    pub se_sharp: (f64, f64),
    pub level: f64,
    pub df_used: usize,
    pub se_used_sharp: f64,
}

/// Normal, Student-t (df = N−1 published) and max-SE intervals; the last one
/// uses the larger of the MLE and Knapp–Hartung standard errors.
pub fn ci_bundle(fit: &CopasRegistryFit, knha_se: f64, level: f64) -> Result<CIBundle> {
    let se = match (fit.converged, fit.se_theta) {
        (true, Some(se)) => se,
        _ => {
            return Err(Error::NotConverged(
                "registry MLE has no usable standard error".into(),
            ))
        }
    };
    if !(knha_se >= 0.0) {
        return Err(Error::Domain(format!(
            "Knapp–Hartung SE must be nonnegative, got {knha_se}"
        )));
    }
    let df = fit.n_published.saturating_sub(1).max(1);
    let z = z_for(level)?;
    let t = t_for(level, df)?;
    let sharp = se.max(knha_se);
    let around = |q: f64, se: f64| (fit.theta - q * se, fit.theta + q * se);
    Ok(CIBundle {
        normal: around(z, se),
        t: around(t, se),
        se_sharp: around(t, sharp),
        level,
        df_used: df,
        se_used_sharp: sharp,
    })
}
