use metabias::dataset::{clopidogrel, tiotropium, MetaDataset};
use metabias::remeta::{fit_random_effects, ReMethod};
use metabias::sensitivity::*;

#[test]
fn grid_points_are_ordered_by_expected_unpublished() {
    let curve = run_grid(&tiotropium(), &GridConfig::default()).unwrap();
    assert!(curve
        .points
        .windows(2)
        .all(|w| w[0].expected_m <= w[1].expected_m));
    assert!(curve
        .points
        .iter()
        .all(|p| p.tau_hat >= 0.0 && p.rho_hat.abs() <= RHO_MAX));
}

#[test]
fn selected_point_passes_the_screen_unless_flagged() {
    for ds in [tiotropium(), clopidogrel()] {
        let config = GridConfig::default();
        let curve = run_grid(&ds, &config).unwrap();
        let chosen = curve.selected_point().unwrap();
        if !curve.fallback {
            assert!(chosen.gof_p.unwrap() > config.gof_threshold);
            let smaller = curve
                .points
                .iter()
                .filter(|p| p.converged && p.expected_m < chosen.expected_m);
            assert!(smaller
                .into_iter()
                .all(|p| p.gof_p.is_none_or(|g| g <= config.gof_threshold)));
        }
    }
}

#[test]
fn weak_selection_stays_near_the_random_effects_estimate() {
    let ds = tiotropium();
    let re = fit_random_effects(&ds, ReMethod::Ml).unwrap();
    let curve = run_grid(&ds, &GridConfig::default()).unwrap();
    let first = curve.points.iter().find(|p| p.converged).unwrap();
    assert!(first.expected_m < 0.5);
    assert!((first.theta_hat - re.theta_hat).abs() < 0.02);
}

#[test]
fn strong_selection_pulls_toward_the_null() {
    let ds = tiotropium();
    let re = fit_random_effects(&ds, ReMethod::Reml).unwrap();
    let curve = run_grid(&ds, &GridConfig::default()).unwrap();
    let last = curve.points.iter().rev().find(|p| p.converged).unwrap();
    assert!(last.theta_hat > re.theta_hat);
}

#[test]
fn anchors_give_the_requested_probabilities() {
    let a = Alphas::from_anchors(0.3, 0.95, 0.1, 0.8).unwrap();
    let p = |s: f64| metabias::numkit::norm_cdf(a.index(s)).unwrap();
    assert!((p(0.8) - 0.3).abs() < 1e-12 && (p(0.1) - 0.95).abs() < 1e-12);
    let flat = Alphas::from_anchors(0.3, 0.95, 0.2, 0.2).unwrap();
    assert_eq!(flat.alpha1, 0.0);
}

#[test]
fn goodness_of_fit_is_a_probability() {
    let ds = clopidogrel();
    let point = fit_conditional(Alphas::new(-0.5, 0.1), &ds).unwrap();
    let p = residual_gof_p(&point, &ds).unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn lazy_selection_agrees_with_the_full_grid() {
    let ds: MetaDataset = clopidogrel();
    let config = GridConfig::default();
    let curve = run_grid(&ds, &config).unwrap();
    let (point, fallback) = select_point(&ds.yi(), &ds.sei(), &config).unwrap();
    assert_eq!(fallback, curve.fallback);
    let chosen = curve.selected_point().unwrap();
    assert!((point.theta_hat - chosen.theta_hat).abs() < 1e-9);
    assert!((point.expected_m - chosen.expected_m).abs() < 1e-9);
}
