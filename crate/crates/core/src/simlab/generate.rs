//! Two-arm binary trials with outcome-dependent publication.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::dataset::{two_by_two_effect, MetaDataset, StudyRecord};
use crate::error::{Error, Result};
use crate::numkit::norm_quantile;

/// Generator used for every simulated quantity.
pub type SimRng = ChaCha8Rng;

/// A `(seed, stream)` pair naming an independent random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn generator(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Selection parameters with publication probabilities `p20` at n = 20 and
/// `p500` at n = 500.
pub fn solve_alphas(p20: f64, p500: f64) -> Result<(f64, f64)> {
    let z20 = norm_quantile(p20)?;
    let z500 = norm_quantile(p500)?;
    let (r20, r500) = (20f64.sqrt(), 500f64.sqrt());
    let alpha1 = (z500 - z20) / (r500 - r20);
    Ok((z20 - alpha1 * r20, alpha1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudy {
    pub theta_i: f64,
    pub p_ctl: f64,
    pub p_trt: f64,
    pub n: u64,
    pub total_trt: u64,
    pub total_ctl: u64,
    pub events_trt: u64,
    pub events_ctl: u64,
    pub yi: f64,
    pub sei: f64,
    pub y_latent: f64,
    pub published: bool,
}

const MIN_N: u64 = 20;
const MAX_ALLOCATION_DRAWS: usize = 1000;
const MAX_META_DRAWS: usize = 10_000;

/// Per-study sample size: LN(5, 1) rounded to the nearest integer, raised to
/// 20 when smaller.
pub fn draw_sample_size(rng: &mut SimRng) -> u64 {
    let ln: LogNormal<f64> = LogNormal::new(5.0, 1.0).expect("valid parameters");
    (ln.sample(rng).round() as u64).max(MIN_N)
}

/// One study drawn under the scenario, with its latent selection variable.
pub fn gen_study(
    config: &ScenarioConfig,
    alphas: (f64, f64),
    rng: &mut SimRng,
) -> Result<SimStudy> {
    let theta_i = if config.tau > 0.0 {
        Normal::new(config.theta, config.tau)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng)
    } else {
        config.theta
    };
    let p_ctl: f64 = Uniform::new(0.2, 0.9).expect("valid range").sample(rng);
    let p_trt = 1.0 / (1.0 + (-((p_ctl / (1.0 - p_ctl)).ln() + theta_i)).exp());
    let n = draw_sample_size(rng);

    let split = Binomial::new(n, 0.5).expect("valid parameters");
    let mut total_trt = split.sample(rng);
    let mut draws = 1;
    while total_trt == 0 || total_trt == n {
        if draws == MAX_ALLOCATION_DRAWS {
            return Err(Error::Domain(format!(
                "could not allocate {n} subjects to two arms"
            )));
        }
        total_trt = split.sample(rng);
        draws += 1;
    }
    let total_ctl = n - total_trt;
    let events_trt = Binomial::new(total_trt, p_trt)
        .expect("valid probability")
        .sample(rng);
    let events_ctl = Binomial::new(total_ctl, p_ctl)
        .expect("valid probability")
        .sample(rng);
    let (yi, sei) = two_by_two_effect(events_trt, total_trt, events_ctl, total_ctl)?;

    let (a0, a1) = alphas;
    let y_latent = draw_latent(a0 + a1 * (n as f64).sqrt(), config, yi, sei, rng);
    Ok(SimStudy {
        theta_i,
        p_ctl,
        p_trt,
        n,
        total_trt,
        total_ctl,
        events_trt,
        events_ctl,
        yi,
        sei,
        y_latent,
        published: y_latent > 0.0,
    })
}

/// Latent publication propensity given the observed effect: normal with
/// mean `index + ρσ(y−θ)/v` and variance `1 − ρ²σ²/v`, where `v = τ² + σ²`.
/// Marginally this pairs `y` and the propensity with correlation `ρσ/√v`.
pub fn draw_latent(
    index: f64,
    config: &ScenarioConfig,
    yi: f64,
    sei: f64,
    rng: &mut SimRng,
) -> f64 {
    let v = config.tau * config.tau + sei * sei;
    let mean = index + config.rho * sei * (yi - config.theta) / v;
    let var = 1.0 - config.rho * config.rho * sei * sei / v;
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mean + var.sqrt() * z
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedMeta {
    /// Published studies first, then unpublished, each in draw order.
    pub dataset: MetaDataset,
    /// Whole meta-analyses discarded for having fewer than 2 published studies.
    pub redraws: usize,
}

/// One simulated meta-analysis of `config.total_studies` studies.
pub fn gen_meta(config: &ScenarioConfig, rng: &mut SimRng) -> Result<GeneratedMeta> {
    let alphas = config.alphas()?;
    for redraws in 0..MAX_META_DRAWS {
        let studies = (0..config.total_studies)
            .map(|_| gen_study(config, alphas, rng))
            .collect::<Result<Vec<_>>>()?;
        if studies.iter().filter(|s| s.published).count() < 2 {
            continue;
        }
        let (published, unpublished): (Vec<_>, Vec<_>) =
            studies.into_iter().partition(|s| s.published);
        let records = published
            .iter()
            .enumerate()
            .map(|(i, s)| StudyRecord::with_effect(format!("P{}", i + 1), s.yi, s.sei, Some(s.n)))
            .chain(
                unpublished
                    .iter()
                    .enumerate()
                    .map(|(i, s)| StudyRecord::unpublished(format!("U{}", i + 1), s.n)),
            )
            .collect();
        return Ok(GeneratedMeta {
            dataset: MetaDataset::new(records)?,
            redraws,
        });
    }
    Err(Error::Domain(format!(
        "no meta-analysis with at least 2 published studies in {MAX_META_DRAWS} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_solve_back() {
        let (a0, a1) = solve_alphas(0.5, 0.5).unwrap();
        assert!(a0.abs() < 1e-15 && a1.abs() < 1e-15);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = RngStream::new(7, 3).generator();
        let mut b = RngStream::new(7, 3).generator();
        let mut c = RngStream::new(7, 4).generator();
        let xa: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.random()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.random()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
