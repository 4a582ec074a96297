#![allow(clippy::excessive_precision, clippy::approx_constant)]

use amid::imaging::Image;
use amid::schedule::{find_integration_step, forward_diffuse, integration_target, NoiseSchedule};
use proptest::prelude::*;
use rand::Rng;

// 50-digit evaluations of the linear-β product
const ALPHA_BAR_1000: f64 = 4.035_829_765_375_683_3e-5;
const ALPHA_BAR_500: f64 = 7.858_724_288_177_823_7e-2;

fn scan(sigma: f64, s: &NoiseSchedule) -> usize {
    let target = integration_target(sigma);
    let mut best = 1;
    for t in 1..=s.steps() {
        if (s.zeta(t) - target).abs() < (s.zeta(best) - target).abs() {
            best = t;
        }
    }
    best
}

#[test]
fn alpha_bar_matches_high_precision_product() {
    let s = NoiseSchedule::default_linear();
    assert!((s.alpha_bar(1000) / ALPHA_BAR_1000 - 1.0).abs() < 1e-6);
    assert!((s.alpha_bar(500) / ALPHA_BAR_500 - 1.0).abs() < 1e-6);
}

#[test]
fn coefficient_identity_everywhere() {
    let s = NoiseSchedule::default_linear();
    for t in 1..=1000 {
        assert!((s.zeta(t).powi(2) + s.noise_coef(t).powi(2) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn golden_integration_steps() {
    // exhaustive scans
    let s = NoiseSchedule::default_linear();
    assert_eq!(find_integration_step(0.06, &s), 15);
    assert_eq!(find_integration_step(0.05, &s), 12);
    assert_eq!(find_integration_step(0.1, &s), 27);
    assert_eq!(find_integration_step(0.2, &s), 58);
}

#[test]
fn search_matches_scan_on_random_levels() {
    let s = NoiseSchedule::default_linear();
    let mut rng = amid::rng::stream(42, 0);
    for _ in 0..100 {
        let sigma: f64 = rng.random();
        assert_eq!(find_integration_step(sigma, &s), scan(sigma, &s), "σ = {sigma}");
    }
}

#[test]
fn forward_variance_monte_carlo() {
    // x₀ = 0 leaves only the noise term
    let s = NoiseSchedule::default_linear();
    let mut rng = amid::rng::stream(8, 0);
    for t in [10, 300, 900] {
        let eps = Image::gaussian(320, 320, &mut rng);
        let lat = forward_diffuse(&Image::zeros(320, 320), t, &eps, &s).unwrap();
        let v = lat.image.variance();
        assert!((v / (1.0 - s.alpha_bar(t)) - 1.0).abs() < 0.01, "t={t} var={v}");
    }
}

proptest! {
    #[test]
    fn monotone_in_sigma(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let s = NoiseSchedule::default_linear();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(find_integration_step(lo, &s) <= find_integration_step(hi, &s));
    }

    #[test]
    fn returned_step_is_locally_optimal(sigma in 0.0f64..5.0) {
        let s = NoiseSchedule::default_linear();
        let t = find_integration_step(sigma, &s);
        let target = integration_target(sigma);
        let gap = |t: usize| (s.zeta(t) - target).abs();
        if t > 1 { prop_assert!(gap(t) <= gap(t - 1)); }
        if t < 1000 { prop_assert!(gap(t) <= gap(t + 1)); }
        prop_assert_eq!(t, scan(sigma, &s));
    }
}
