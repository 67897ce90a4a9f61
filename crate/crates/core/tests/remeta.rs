use metabias::dataset::{clopidogrel, tiotropium, MetaDataset};
use metabias::remeta::*;
use proptest::prelude::*;

fn or(x: f64) -> f64 {
    x.exp()
}

#[test]
fn tiotropium_reml_and_knapp_hartung() {
    let ds = tiotropium();
    let fit = fit_random_effects(&ds, ReMethod::Reml).unwrap();
    let (lo, hi) = ci_normal(&fit, 0.95).unwrap();
    assert!((or(fit.theta_hat) - 0.768).abs() < 0.005);
    assert!((or(lo) - 0.697).abs() < 0.005 && (or(hi) - 0.847).abs() < 0.005);
    let hk = ci_knapp_hartung(&ds, &fit, 0.95).unwrap();
    assert!((or(hk.lower) - 0.691).abs() < 0.005 && (or(hk.upper) - 0.854).abs() < 0.005);
}

#[test]
fn clopidogrel_reml_and_knapp_hartung() {
    let ds = clopidogrel();
    let fit = fit_random_effects(&ds, ReMethod::Reml).unwrap();
    let (lo, hi) = ci_normal(&fit, 0.95).unwrap();
    assert!((or(fit.theta_hat) - 0.579).abs() < 0.01);
    assert!((or(lo) - 0.375).abs() < 0.01 && (or(hi) - 0.892).abs() < 0.01);
    let hk = ci_knapp_hartung(&ds, &fit, 0.95).unwrap();
    assert!((or(hk.lower) - 0.385).abs() < 0.01 && (or(hk.upper) - 0.871).abs() < 0.01);
}

#[test]
fn ml_variance_is_no_larger_than_reml() {
    for ds in [tiotropium(), clopidogrel()] {
        let reml = fit_random_effects(&ds, ReMethod::Reml).unwrap();
        let ml = fit_random_effects(&ds, ReMethod::Ml).unwrap();
        assert!(ml.tau2_hat <= reml.tau2_hat + 1e-12);
    }
}

#[test]
fn homogeneous_effects_give_zero_heterogeneity() {
    let y = [0.1, 0.1, 0.1, 0.1];
    let s = [0.2, 0.3, 0.4, 0.5];
    let fit = fit_effects(&y, &s, ReMethod::Reml).unwrap();
    assert_eq!(fit.tau2_hat, 0.0);
    assert!((fit.theta_hat - 0.1).abs() < 1e-12);
}

#[test]
fn one_dominant_study_still_converges() {
    // One very precise study makes the expected information a poor guide to
    // the curvature; the fit must still settle.
    let y = [
        -0.43, -1.21, -0.09, -0.35, -0.2, -1.19, -0.41, -0.16, -0.79, -0.21, 0.01, -0.36,
    ];
    let s = [
        0.16, 0.47, 0.15, 0.42, 0.22, 0.75, 0.26, 0.35, 0.43, 0.069, 0.2, 0.18,
    ];
    for method in [ReMethod::Reml, ReMethod::Ml] {
        let fit = fit_effects(&y, &s, method).unwrap();
        assert!(fit.tau2_hat >= 0.0 && fit.theta_hat.is_finite());
    }
}

#[test]
fn asymmetry_tests_on_published_subsets() {
    let rows: Vec<_> = tiotropium()
        .studies()
        .iter()
        .filter(|s| s.published)
        .take(22)
        .cloned()
        .collect();
    let first22 = MetaDataset::new(rows).unwrap();
    assert!((egger_test(&first22).unwrap().p_value - 0.22).abs() < 0.03);
    assert!((egger_test(&clopidogrel()).unwrap().p_value - 0.25).abs() < 0.03);
    assert!((macaskill_test(&clopidogrel()).unwrap().p_value - 0.02).abs() < 0.02);
}

proptest! {
    #[test]
    fn estimate_lies_within_the_effect_range(
        studies in prop::collection::vec((-2.0..2.0f64, 0.05..1.0f64), 2..30),
    ) {
        let (y, s): (Vec<f64>, Vec<f64>) = studies.into_iter().unzip();
        let fit = fit_effects(&y, &s, ReMethod::Reml).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fit.theta_hat >= lo - 1e-12 && fit.theta_hat <= hi + 1e-12);
        prop_assert!(fit.tau2_hat >= 0.0);
    }

    #[test]
    fn shifting_effects_shifts_the_estimate(
        studies in prop::collection::vec((-2.0..2.0f64, 0.05..1.0f64), 3..20),
        shift in -1.0..1.0f64,
    ) {
        let (y, s): (Vec<f64>, Vec<f64>) = studies.into_iter().unzip();
        let moved: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let a = fit_effects(&y, &s, ReMethod::Reml).unwrap();
        let b = fit_effects(&moved, &s, ReMethod::Reml).unwrap();
        prop_assert!((b.theta_hat - a.theta_hat - shift).abs() < 1e-8);
        prop_assert!((b.tau2_hat - a.tau2_hat).abs() < 1e-8 * a.tau2_hat.max(1.0));
    }
}
