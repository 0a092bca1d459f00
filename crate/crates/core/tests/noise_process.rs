mod common;

use cntlab::noise::{sample_time, NoiseFamily, NoiseMode, NoiseSchedule, TimeSampling};
use cntlab::rng::{stream, Stream};
use common::{correlation, ks_uniform, mean_std, simpson};
use proptest::prelude::*;

fn quadrature_integral(s: &NoiseSchedule, t: f64) -> f64 {
    simpson(|u| s.beta_min() + u * (s.beta_max() - s.beta_min()), 0.0, t, 64)
}

#[test]
fn integral_matches_quadrature() {
    let s = NoiseSchedule::default();
    for (t, expected) in [(1.0, 10.1), (0.5, 2.575)] {
        let oracle = quadrature_integral(&s, t);
        assert!(((oracle - expected) / expected).abs() < 1e-10);
        let got = s.beta_integral(t).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-10, "t={t}: {got} vs {oracle}");
    }
}

#[test]
fn marginal_matches_quadrature_route() {
    let s = NoiseSchedule::default();
    for t in [0.0, 0.1, 0.25, 0.5, 0.75, 1.0] {
        let b = quadrature_integral(&s, t);
        let m = s.marginal_params(t).unwrap();
        assert!((m.mean_coeff - (-0.5 * b).exp()).abs() < 1e-12);
        assert!((m.std - (1.0 - (-b).exp()).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn gaussian_monte_carlo_at_level_one() {
    let s = NoiseSchedule::default();
    let y = [1.0, 0.0, -2.0];
    let mut rng = stream(5, Stream::Noise);
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| s.corrupt(&y, 1.0, &mut rng).unwrap().y_noisy).collect();
    let m = s.marginal_params(1.0).unwrap();
    for (j, &yj) in y.iter().enumerate() {
        let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let (mean, std) = mean_std(&col);
        assert!((mean - m.mean_coeff * yj).abs() < 0.01, "coord {j}: mean {mean}");
        assert!((std - 1.0).abs() < 0.01, "coord {j}: std {std}");
    }
}

#[test]
fn laplace_monte_carlo_at_half() {
    let s = NoiseSchedule::with(NoiseFamily::Laplace, NoiseMode::Cnt);
    let mut rng = stream(6, Stream::Noise);
    let col: Vec<f64> = (0..100_000).map(|_| s.corrupt(&[1.0], 0.5, &mut rng).unwrap().y_noisy[0]).collect();
    let (mean, std) = mean_std(&col);
    let m = s.marginal_params(0.5).unwrap();
    assert!((mean - m.mean_coeff).abs() < 0.02);
    assert!((std - 2f64.sqrt() * 0.9611).abs() < 0.02, "std {std}");
}

#[test]
fn level_one_is_nearly_independent_of_target() {
    let s = NoiseSchedule::default();
    let mut rng = stream(7, Stream::Noise);
    let mut labels = stream(8, Stream::TrainData);
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for _ in 0..100_000 {
        let y = if rand::Rng::random::<bool>(&mut labels) { 1.0 } else { 0.0 };
        clean.push(y);
        noisy.push(s.corrupt(&[y], 1.0, &mut rng).unwrap().y_noisy[0]);
    }
    assert!(correlation(&clean, &noisy).abs() < 0.02);
}

#[test]
fn training_levels_are_uniform() {
    let mut rng = stream(9, Stream::Noise);
    let t: Vec<f64> = (0..100_000).map(|_| sample_time(&mut rng, TimeSampling::Train)).collect();
    assert!(ks_uniform(&t) < 0.01);
}

#[test]
fn only_noise_mean_coefficient_decay() {
    // With a constant rate of 20 the mean coefficient is exp(-10 t); it falls
    // below 1e-2 once t > ln(100)/10 ≈ 0.4605.
    let s = NoiseSchedule::with(NoiseFamily::Gaussian, NoiseMode::OnlyNoise);
    let threshold = 100f64.ln() / 10.0;
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let m = s.marginal_params(t).unwrap().mean_coeff;
        assert!((m - (-10.0 * t).exp()).abs() < 1e-15);
        if t > threshold {
            assert!(m < 1e-2);
        }
    }
    assert!(s.marginal_params(0.9).unwrap().mean_coeff < 2e-4);
}

#[test]
fn only_noise_at_high_level_is_standard_normal() {
    let s = NoiseSchedule::with(NoiseFamily::Gaussian, NoiseMode::OnlyNoise);
    let mut rng = stream(10, Stream::Noise);
    let col: Vec<f64> = (0..50_000).map(|_| s.corrupt(&[1.0], 0.9, &mut rng).unwrap().y_noisy[0]).collect();
    let (mean, std) = mean_std(&col);
    assert!(mean.abs() < 0.02 && (std - 1.0).abs() < 0.02, "{mean} {std}");
}

proptest! {
    #[test]
    fn marginal_is_monotone_and_variance_preserving(
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
        beta_min in 0.0f64..5.0,
        span in 0.0f64..30.0,
    ) {
        let s = NoiseSchedule::new(beta_min, beta_min + span, NoiseFamily::Gaussian, NoiseMode::Cnt).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = s.marginal_params(lo).unwrap();
        let b = s.marginal_params(hi).unwrap();
        prop_assert!(b.mean_coeff <= a.mean_coeff);
        prop_assert!(b.std >= a.std);
        prop_assert!(a.mean_coeff * a.mean_coeff + a.std * a.std <= 1.0 + 1e-12);
    }
}
