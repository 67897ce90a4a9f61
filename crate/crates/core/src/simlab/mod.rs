//! Monte Carlo comparison of the estimators under a known selection model.
//!
//! Each replication simulates a meta-analysis, keeps the unpublished studies'
//! sample sizes as a registry would, and applies every method. Replications
//! are independent, each with its own random stream, and run in parallel on
//! the current rayon pool.

mod config;
mod generate;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_scenario_config, write_scenario_config};
pub use generate::{
    draw_latent, draw_sample_size, gen_meta, gen_study, solve_alphas, GeneratedMeta, RngStream,
    SimRng, SimStudy,
};

use crate::error::{Error, Result};
use crate::registry::{ci_bundle, fit_full_mle, RegistryConfig};
use crate::remeta::{ci_normal, fit_random_effects, knapp_hartung_effects, z_for, ReMethod};
use crate::sensitivity::{select_point, GridConfig};

/// How the selection parameters are specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Publication probabilities at n = 20 and n = 500.
    Anchors {
        p20: f64,
        p500: f64,
    },
    Alphas {
        alpha0: f64,
        alpha1: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub theta: f64,
    pub tau: f64,
    pub rho: f64,
    pub selection: Selection,
    pub total_studies: usize,
    pub replications: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Include the Copas sensitivity comparator, the slowest method.
    pub copas: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            theta: -0.25,
            tau: 0.05,
            rho: -0.8,
            selection: Selection::Anchors {
                p20: 0.1,
                p500: 0.99,
            },
            total_studies: 50,
            replications: 1000,
            seed: 1,
            ci_level: 0.95,
            copas: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Domain(m));
        if !self.theta.is_finite() {
            return fail(format!("theta must be finite, got {}", self.theta));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be nonnegative, got {}", self.tau));
        }
        if !(self.rho.abs() < 1.0) {
            return fail(format!("rho must lie in (-1, 1), got {}", self.rho));
        }
        if self.total_studies < 2 {
            return fail(format!(
                "need at least 2 studies per meta-analysis, got {}",
                self.total_studies
            ));
        }
        if self.replications < 1 {
            return fail("need at least 1 replication".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return fail(format!(
                "confidence level must lie in (0, 1), got {}",
                self.ci_level
            ));
        }
        self.alphas().map(|_| ())
    }

    /// `(α₀, α₁)` of the selection model `Φ(α₀ + α₁√n)`.
    pub fn alphas(&self) -> Result<(f64, f64)> {
        match self.selection {
            Selection::Anchors { p20, p500 } => solve_alphas(p20, p500),
            Selection::Alphas { alpha0, alpha1 } if alpha0.is_finite() && alpha1.is_finite() => {
                Ok((alpha0, alpha1))
            }
            Selection::Alphas { .. } => {
                Err(Error::Domain("selection parameters must be finite".into()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "REML")]
    Reml,
    #[serde(rename = "REML.KnHa")]
    RemlKnha,
    Copas,
    #[serde(rename = "MLE(N)")]
    MleNormal,
    #[serde(rename = "MLE(T)")]
    MleT,
    #[serde(rename = "MLE(SE#)")]
    MleSeSharp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Reml,
        Method::RemlKnha,
        Method::Copas,
        Method::MleNormal,
        Method::MleT,
        Method::MleSeSharp,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Reml => "REML",
            Method::RemlKnha => "REML.KnHa",
            Method::Copas => "Copas",
            Method::MleNormal => "MLE(N)",
            Method::MleT => "MLE(T)",
            Method::MleSeSharp => "MLE(SE#)",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == label)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Point estimate and interval for θ on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub n_published: usize,
    pub redraws: usize,
    /// One slot per [`Method::ALL`] entry; `None` when the method failed.
    pub outcomes: [Option<MethodOutcome>; 6],
}

impl ReplicationRecord {
    pub fn outcome(&self, method: Method) -> Option<MethodOutcome> {
        self.outcomes[method as usize]
    }
}

/// Simulates and analyses replication `index` of the scenario.
pub fn run_replication(config: &ScenarioConfig, index: usize) -> Result<ReplicationRecord> {
    let mut rng = RngStream::new(config.seed, index as u64).generator();
    let generated = gen_meta(config, &mut rng)?;
    let ds = &generated.dataset;
    let level = config.ci_level;
    let mut outcomes = [None; 6];
    let mut put = |m: Method, estimate: f64, (lower, upper): (f64, f64)| {
        outcomes[m as usize] = Some(MethodOutcome {
            estimate,
            lower,
            upper,
        });
    };

    let (y, s) = (ds.yi(), ds.sei());
    let mut knha_se = None;
    if let Ok(re) = fit_random_effects(ds, ReMethod::Reml) {
        put(Method::Reml, re.theta_hat, ci_normal(&re, level)?);
        if let Ok(hk) = knapp_hartung_effects(&y, &s, &re, level) {
            put(Method::RemlKnha, re.theta_hat, (hk.lower, hk.upper));
            knha_se = Some(hk.se_hk);
        }
    }
    if config.copas {
        if let Ok((point, _)) = select_point(&y, &s, &GridConfig::default()) {
            if let Some(ci) = point.ci(z_for(level)?) {
                put(Method::Copas, point.theta_hat, ci);
            }
        }
    }
    if let Ok(fit) = fit_full_mle(ds, &RegistryConfig::default()) {
        if fit.converged {
            let bundle = ci_bundle(&fit, knha_se.unwrap_or(0.0), level)?;
            put(Method::MleNormal, fit.theta, bundle.normal);
            put(Method::MleT, fit.theta, bundle.t);
            if knha_se.is_some() {
                put(Method::MleSeSharp, fit.theta, bundle.se_sharp);
            }
        }
    }
    Ok(ReplicationRecord {
        index,
        n_published: ds.n_published(),
        redraws: generated.redraws,
        outcomes,
    })
}

/// Runs every replication in parallel and summarises against the true θ.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioSummary> {
    let records = run_records(config)?;
    Ok(summarize(&records, config.theta))
}

/// Per-replication records in replication order.
pub fn run_records(config: &ScenarioConfig) -> Result<Vec<ReplicationRecord>> {
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean estimate.
    pub ave: f64,
    /// Empirical standard deviation of the estimates.
    pub sd: f64,
    /// Coverage of the true θ.
    pub cp: f64,
    /// Mean interval length.
    pub loci: f64,
    /// Number of converged replications.
    pub noc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub replications: usize,
    pub truth: f64,
    /// Methods with at least one converged replication, in [`Method::ALL`]
    /// order.
    pub methods: Vec<MethodSummary>,
}

impl ScenarioSummary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Aggregates per-method statistics over converged replications. Values are
/// sorted before summation so the result does not depend on record order.
pub fn summarize(records: &[ReplicationRecord], truth: f64) -> ScenarioSummary {
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    let methods = Method::ALL
        .into_iter()
        .filter_map(|m| {
            let outs: Vec<MethodOutcome> = records.iter().filter_map(|r| r.outcome(m)).collect();
            let noc = outs.len();
            if noc == 0 {
                return None;
            }
            let k = noc as f64;
            let ave = sorted_sum(outs.iter().map(|o| o.estimate).collect()) / k;
            let ss = sorted_sum(outs.iter().map(|o| (o.estimate - ave).powi(2)).collect());
            let sd = if noc > 1 {
                (ss / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            let covered = outs
                .iter()
                .filter(|o| o.lower <= truth && truth <= o.upper)
                .count();
            let loci = sorted_sum(outs.iter().map(|o| o.upper - o.lower).collect()) / k;
            Some(MethodSummary {
                method: m,
                ave,
                sd,
                cp: covered as f64 / k,
                loci,
                noc,
            })
        })
        .collect();
    ScenarioSummary {
        replications: records.len(),
        truth,
        methods,
    }
}
