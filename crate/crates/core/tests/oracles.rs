mod common;

use common::*;
use didcurve::curves::fit_mr;
use didcurve::inference::{sandwich_bands, SandwichMode};
use didcurve::nuisance::ExtrapolationPolicy;
use didcurve::numeric::stats::linspace;
use didcurve::numeric::{default_bandwidth_grid, local_linear_fit, select_bandwidth, KernelSpec};
use didcurve::pseudo::{compute_theta0, compute_xi};
use didcurve::simulation::{scenario_specs, Dgp, Misspecification};
use didcurve::{EstimatorConfig, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: KernelSpec = KernelSpec::Epanechnikov;

#[test]
fn marginals_match_loop_averages() {
    for (n, seed) in [(60, 1), (100, 2)] {
        let data = synthetic(n, seed);
        let grid = linspace(0.5, 3.5, 25);
        let models = closed_form_models()
            .marginalize(&data, &grid, None)
            .unwrap();
        let (m, f) = (models.m_marginal().unwrap(), models.f_marginal().unwrap());
        for (&d, (&mv, &fv)) in m.grid().iter().zip(m.values().iter().zip(f.values())) {
            assert!((mv - brute_m(&data, d)).abs() < 1e-12, "m at {d}");
            assert!((fv - brute_f(&data, d)).abs() < 1e-12, "f at {d}");
        }
        assert_eq!(m.grid().len(), grid.len() + data.n_treated());
    }
}

#[test]
fn xi_matches_direct_formula() {
    for seed in 0..5 {
        let data = synthetic(45, seed);
        let grid = linspace(1.0, 3.0, 10);
        let models = closed_form_models()
            .marginalize(&data, &grid, None)
            .unwrap();
        let xi = compute_xi(&data, &models, ExtrapolationPolicy::Error, None).unwrap();
        let oracle = brute_xi(&data);
        assert_eq!(xi.xi.len(), oracle.len());
        for (a, b) in xi.xi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn theta0_matches_direct_formula() {
    for seed in 0..5 {
        let data = synthetic(60, 10 + seed);
        let out = compute_theta0(&data, &closed_form_models(), None).unwrap();
        let (t00, t01) = brute_theta0(&data);
        assert!((out.theta00 - t00).abs() < 1e-12);
        assert!((out.theta01 - t01).abs() < 1e-12);
        assert!((out.theta0() - t00 - t01).abs() < 1e-12);
    }
}

#[test]
fn local_linear_matches_normal_equations_on_a_cubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| x * x * x - x + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    let h = select_bandwidth(&xs, &ys, &default_bandwidth_grid(&xs, None).unwrap(), K).unwrap();
    for delta in linspace(-1.7, 1.7, 20) {
        let (fit, _) = local_linear_fit(&xs, &ys, h, delta, K).unwrap();
        let oracle = direct_local_linear(&xs, &ys, h, delta, None).unwrap();
        assert!(
            (fit - oracle).abs() < 1e-10,
            "delta {delta}: {fit} vs {oracle}"
        );
    }
}

#[test]
fn bandwidth_matches_exhaustive_sweep() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..6.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| x.sin() + 0.3 * rng.random_range(-1.0..1.0))
            .collect();
        let grid = default_bandwidth_grid(&xs, None).unwrap();
        let h = select_bandwidth(&xs, &ys, &grid, K).unwrap();
        assert_eq!(Some(h), brute_bandwidth(&xs, &ys, &grid));
    }
}

#[test]
fn sandwich_control_block_matches_weighted_mean_variance() {
    let data: didcurve::TwoPeriodDataset = Dgp::benchmark().generate(400, 3, 0).unwrap();
    let config = EstimatorConfig::new(Method::Mr, scenario_specs(&Misspecification::new()));
    let fit = fit_mr(&data, &config, None, None).unwrap();
    let bands = sandwich_bands(&data, &fit, K, SandwichMode::Base).unwrap();

    // Hajek control mean: sum w^2 (r - mean)^2 / (sum w)^2; treated mean of
    // mu0: sum (m - mean)^2 / n_A^2; the two are uncorrelated.
    let models = fit.fitted.model_set();
    let (pi_a, mu0) = (models.pi_a().unwrap(), models.mu0().unwrap());
    let (mut sw, mut sw2r2, mut sr) = (0.0, 0.0, 0.0);
    let controls = control_rows(&data);
    for &i in &controls {
        let p = pi_a.prob(data.x_row(i));
        let w = p / (1.0 - p);
        sw += w;
        sr += w * (data.trend(i) - mu0.eval(data.x_row(i)));
    }
    let theta00 = sr / sw;
    for &i in &controls {
        let p = pi_a.prob(data.x_row(i));
        let w = p / (1.0 - p);
        sw2r2 += (w * (data.trend(i) - mu0.eval(data.x_row(i)) - theta00)).powi(2);
    }
    let treated = treated_rows(&data);
    let theta01 = treated
        .iter()
        .map(|&i| mu0.eval(data.x_row(i)))
        .sum::<f64>()
        / treated.len() as f64;
    let v44 = treated
        .iter()
        .map(|&i| (mu0.eval(data.x_row(i)) - theta01).powi(2))
        .sum::<f64>()
        / (treated.len() as f64).powi(2);
    let v33 = sw2r2 / (sw * sw);
    for cov in &bands.covariance {
        assert!((cov[(2, 2)] - v33).abs() < 1e-8 * v33.max(1.0));
        assert!((cov[(3, 3)] - v44).abs() < 1e-8 * v44.max(1.0));
        assert!(cov[(2, 3)].abs() < 1e-12);
    }
}
