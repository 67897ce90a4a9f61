use metabias::dataset::{clopidogrel, tiotropium};
use metabias::numkit::{log_norm_cdf, numeric_gradient, GRADIENT_STEP};
use metabias::registry::{full_loglik, full_loglik_data, full_loglik_gradient, RegistryData};
use metabias::sensitivity::{
    cond_loglik, cond_loglik_effects, cond_loglik_gradient, expected_unpublished, Alphas,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal_part(theta: f64, tau: f64, y: &[f64], s: &[f64]) -> f64 {
    y.iter()
        .zip(s)
        .map(|(y, s)| {
            let v = tau * tau + s * s;
            -0.5 * v.ln() - (y - theta).powi(2) / (2.0 * v)
        })
        .sum()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn conditional_selection_terms_cancel_without_correlation() {
    let ds = clopidogrel();
    let (y, s) = (ds.yi(), ds.sei());
    for alphas in [
        Alphas::new(-1.0, 0.1),
        Alphas::new(0.5, 0.02),
        Alphas::new(-3.0, 0.4),
    ] {
        for (theta, tau) in [(-0.3, 0.1), (0.2, 0.5)] {
            let got = cond_loglik([theta, tau, 0.0], alphas, &ds);
            assert!(close(got, normal_part(theta, tau, &y, &s), 1e-6));
        }
    }
}

#[test]
fn full_likelihood_separates_without_correlation() {
    let ds = tiotropium();
    let data = RegistryData::from_dataset(&ds).unwrap();
    for (theta, tau, a0, a1) in [(-0.25, 0.05, -1.0, 0.1), (0.1, 0.4, 0.3, -0.02)] {
        let probit: f64 = data
            .n_published
            .iter()
            .map(|n| log_norm_cdf(a0 + a1 * n.sqrt()))
            .sum::<f64>()
            + data
                .n_unpublished
                .iter()
                .map(|n| log_norm_cdf(-(a0 + a1 * n.sqrt())))
                .sum::<f64>();
        let expect = normal_part(theta, tau, &data.y, &data.s) + probit;
        let got = full_loglik([theta, tau, 0.0, a0, a1], &ds).unwrap();
        assert!(close(got, expect, 1e-6), "{got} vs {expect}");
    }
}

#[test]
fn conditional_gradient_matches_finite_differences() {
    let ds = clopidogrel();
    let (y, s) = (ds.yi(), ds.sei());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(-0.9..0.9),
        ];
        let alphas = Alphas::new(rng.random_range(-2.0..1.0), rng.random_range(0.0..0.5));
        let exact = cond_loglik_gradient(p, alphas, &y, &s);
        let fd = numeric_gradient(
            |x| cond_loglik_effects([x[0], x[1], x[2]], alphas, &y, &s),
            &p,
            GRADIENT_STEP,
        )
        .unwrap();
        for (a, b) in exact.iter().zip(&fd) {
            assert!(close(*a, *b, 1e-6), "at {p:?}: {exact:?} vs {fd:?}");
        }
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    let data = RegistryData::from_dataset(&tiotropium()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(-0.9..0.9),
            rng.random_range(-2.0..1.0),
            rng.random_range(-0.05..0.15),
        ];
        let exact = full_loglik_gradient(p, &data);
        let fd = numeric_gradient(
            |x| full_loglik_data([x[0], x[1], x[2], x[3], x[4]], &data),
            &p,
            GRADIENT_STEP,
        )
        .unwrap();
        for (a, b) in exact.iter().zip(&fd) {
            assert!(close(*a, *b, 1e-6), "at {p:?}: {exact:?} vs {fd:?}");
        }
    }
}

#[test]
fn expected_unpublished_identities() {
    let ds = tiotropium();
    let n = ds.n_published() as f64;
    assert!((expected_unpublished(Alphas::new(0.0, 0.0), &ds) - n).abs() < 1e-12);
    assert!(expected_unpublished(Alphas::new(40.0, 0.0), &ds) < 1e-300);
}

#[test]
fn expected_unpublished_falls_as_selection_weakens() {
    let ds = clopidogrel();
    let ms: Vec<f64> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|a0| expected_unpublished(Alphas::new(*a0, 0.1), &ds))
        .collect();
    assert!(ms.windows(2).all(|w| w[0] > w[1]), "{ms:?}");
}
