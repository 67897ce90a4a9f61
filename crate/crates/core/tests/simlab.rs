use metabias::numkit::norm_cdf;
use metabias::simlab::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn alpha_solver_reproduces_reference_pairs() {
    for ((p20, p500), (a0, a1)) in [
        ((0.1, 0.99), (-2.18, 0.20)),
        ((0.3, 0.99), (-1.24, 0.16)),
        ((0.5, 0.99), (-0.58, 0.13)),
    ] {
        let (b0, b1) = solve_alphas(p20, p500).unwrap();
        assert!(
            (b0 - a0).abs() < 0.005 && (b1 - a1).abs() < 0.005,
            "({b0}, {b1})"
        );
    }
    assert!(solve_alphas(0.0, 0.5).is_err());
}

#[test]
fn latent_draw_has_the_joint_correlation() {
    // With τ = 0 and σ fixed, the standardised effect and the latent
    // propensity are bivariate normal with correlation ρ.
    for rho in [-0.8, 0.0, 0.5] {
        let config = ScenarioConfig {
            tau: 0.0,
            rho,
            ..ScenarioConfig::default()
        };
        let sigma = 0.3;
        let mut rng = RngStream::new(5, 0).generator();
        let effect = Normal::new(config.theta, sigma).unwrap();
        let (mut zs, mut latents) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let y = effect.sample(&mut rng);
            latents.push(draw_latent(0.4, &config, y, sigma, &mut rng));
            zs.push((y - config.theta) / sigma);
        }
        let r = correlation(&zs, &latents);
        assert!((r - rho).abs() < 0.01, "rho {rho}: {r}");
    }
}

#[test]
fn unpublished_fractions_match_the_scenarios() {
    for ((p20, p500), target) in [
        ((0.1, 0.99), 0.40),
        ((0.3, 0.99), 0.27),
        ((0.5, 0.99), 0.19),
    ] {
        let config = ScenarioConfig {
            selection: Selection::Anchors { p20, p500 },
            ..ScenarioConfig::default()
        };
        let alphas = config.alphas().unwrap();
        let mut rng = RngStream::new(17, 0).generator();
        let draws = 10_000;
        let hidden = (0..draws)
            .filter(|_| !gen_study(&config, alphas, &mut rng).unwrap().published)
            .count();
        let frac = hidden as f64 / draws as f64;
        assert!((frac - target).abs() < 0.03, "({p20}, {p500}): {frac}");
    }
}

#[test]
fn sample_sizes_pile_up_at_the_floor() {
    let mut rng = RngStream::new(3, 0).generator();
    let draws = 100_000;
    let sizes: Vec<u64> = (0..draws).map(|_| draw_sample_size(&mut rng)).collect();
    assert!(sizes.iter().all(|n| *n >= 20));
    let at_floor = sizes.iter().filter(|n| **n == 20).count() as f64 / draws as f64;
    let expect = norm_cdf(20.5f64.ln() - 5.0).unwrap();
    assert!((at_floor - expect).abs() < 0.003, "{at_floor} vs {expect}");
}

#[test]
fn no_correlation_means_no_dependence() {
    let config = ScenarioConfig {
        tau: 0.0,
        rho: 0.0,
        ..ScenarioConfig::default()
    };
    let alphas = config.alphas().unwrap();
    let mut rng = RngStream::new(8, 0).generator();
    let (mut ys, mut resid) = (Vec::new(), Vec::new());
    for _ in 0..100_000 {
        let s = gen_study(&config, alphas, &mut rng).unwrap();
        ys.push(s.yi);
        resid.push(s.y_latent - (alphas.0 + alphas.1 * (s.n as f64).sqrt()));
    }
    assert!(correlation(&ys, &resid).abs() < 0.01);
}

#[test]
fn negative_correlation_biases_published_effects_downward() {
    let config = ScenarioConfig::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..300 {
        let mut rng = RngStream::new(21, i).generator();
        let meta = gen_meta(&config, &mut rng).unwrap();
        let y = meta.dataset.yi();
        total += y.iter().sum::<f64>();
        count += y.len();
        assert!(meta.dataset.n_published() >= 2);
        assert_eq!(
            meta.dataset.n_published() + meta.dataset.n_unpublished(),
            config.total_studies
        );
    }
    assert!(total / (count as f64) < config.theta);
}

#[test]
fn fixed_seed_is_reproducible() {
    let config = ScenarioConfig {
        total_studies: 12,
        replications: 6,
        copas: false,
        seed: 4,
        ..ScenarioConfig::default()
    };
    let a = run_records(&config).unwrap();
    let b = run_records(&config).unwrap();
    assert_eq!(a, b);
    let other = run_records(&ScenarioConfig {
        seed: 5,
        ..config.clone()
    })
    .unwrap();
    assert_ne!(a, other);
    assert_eq!(summarize(&a, config.theta), run_scenario(&config).unwrap());
}

#[test]
fn config_files_round_trip() {
    let config = ScenarioConfig {
        rho: -0.4,
        total_studies: 15,
        copas: false,
        ..ScenarioConfig::default()
    };
    assert_eq!(
        parse_scenario_config(&write_scenario_config(&config)).unwrap(),
        config
    );
}

fn outcome() -> impl Strategy<Value = Option<MethodOutcome>> {
    prop::option::of(
        (-1.0..0.5f64, 0.01..0.5f64, 0.01..0.5f64).prop_map(|(e, l, u)| MethodOutcome {
            estimate: e,
            lower: e - l,
            upper: e + u,
        }),
    )
}

proptest! {
    #[test]
    fn summaries_ignore_record_order(
        slots in prop::collection::vec(prop::array::uniform6(outcome()), 1..40),
        seed in any::<u64>(),
    ) {
        let records: Vec<ReplicationRecord> = slots
            .into_iter()
            .enumerate()
            .map(|(index, outcomes)| ReplicationRecord { index, n_published: 5, redraws: 0, outcomes })
            .collect();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = summarize(&records, -0.25);
        prop_assert_eq!(&a, &summarize(&shuffled, -0.25));
        for m in &a.methods {
            prop_assert!(m.noc >= 1 && (0.0..=1.0).contains(&m.cp) && m.loci > 0.0);
        }
    }
}
