mod common;

use common::*;
use didcurve::curves::{estimate_curve_weighted, fit_mr, EstimatorConfig, GridSpec};
use didcurve::data::TwoPeriodDataset;
use didcurve::inference::{
    bootstrap_weights, equation_system, sandwich_bands, weighted_bootstrap, BootstrapConfig,
    SandwichMode, WeightStream,
};
use didcurve::nuisance::{NuisanceKind, NuisanceSpecs};
use didcurve::numeric::stats::{linspace, trapezoid};
use didcurve::numeric::KernelSpec;
use didcurve::pseudo::{j_term, normalize_weights};
use didcurve::simulation::{scenario_specs, Dgp, Misspecification};
use didcurve::{estimate_curve, Method};

const K: KernelSpec = KernelSpec::Epanechnikov;

fn benchmark_data(n: usize, replicate: u64) -> TwoPeriodDataset<f64> {
    Dgp::benchmark().generate(n, 42, replicate).unwrap()
}

fn mr_config() -> EstimatorConfig<f64> {
    EstimatorConfig::new(Method::Mr, scenario_specs(&Misspecification::new()))
}

#[test]
fn hajek_weights_have_mean_one() {
    let data = benchmark_data(600, 0);
    let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
    let w1 = &fit.pseudo.xi.w1;
    let w0 = &fit.pseudo.theta.w0;
    assert!((w1.iter().sum::<f64>() / w1.len() as f64 - 1.0).abs() < 1e-10);
    assert!((w0.iter().sum::<f64>() / w0.len() as f64 - 1.0).abs() < 1e-10);
    let again = normalize_weights(w1).unwrap();
    for (a, b) in again.iter().zip(w1) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn j_term_vanishes_with_empirical_marginals() {
    for r in 0..3 {
        let data = benchmark_data(500, r);
        let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
        assert!(j_term(&data, &fit.models).unwrap().abs() < 1e-10);
    }
    let data = synthetic(80, 5);
    let models = closed_form_models()
        .marginalize(&data, &linspace(0.0, 4.0, 30), None)
        .unwrap();
    assert!(j_term(&data, &models).unwrap().abs() < 1e-10);
}

#[test]
fn psi_is_theta_minus_control_components() {
    let data = benchmark_data(700, 1);
    let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
    let theta0 = fit.pseudo.theta.theta00 + fit.pseudo.theta.theta01;
    for (psi, theta) in fit.curve.psi.iter().zip(&fit.curve.theta_curve) {
        assert!((psi - (theta - theta0)).abs() < 1e-12);
    }
    for method in [Method::Ipw, Method::Naive, Method::MrParametric] {
        let c = estimate_curve(&data, &mr_config().with_method(method)).unwrap();
        let gap = c.psi[0] - c.theta_curve[0];
        assert!((gap + c.theta0).abs() < 1e-12);
        assert!(c
            .psi
            .iter()
            .zip(&c.theta_curve)
            .all(|(p, t)| (p - t - gap).abs() < 1e-12));
    }
}

#[test]
fn estimates_are_deterministic() {
    let data = benchmark_data(400, 2);
    for method in Method::ALL {
        let config = mr_config().with_method(method);
        assert_eq!(
            estimate_curve(&data, &config).unwrap(),
            estimate_curve(&data, &config).unwrap()
        );
    }
}

#[test]
fn unit_bootstrap_weights_reproduce_point_estimates() {
    let data = benchmark_data(300, 3);
    for method in Method::ALL {
        let config = mr_config().with_method(method);
        let curve = estimate_curve(&data, &config).unwrap();
        let boot = BootstrapConfig {
            replicates: 3,
            seed: 9,
            stream: WeightStream::Unit,
        };
        let result = weighted_bootstrap(&data, &config, &curve, &boot).unwrap();
        for r in &result.replicates {
            assert_eq!(r, &curve.psi, "{method}");
        }
    }
}

#[test]
fn stacked_sandwich_with_one_pair_equals_base() {
    use didcurve::panel::{estimate_repeated, PanelInference};
    let data = benchmark_data(400, 4);
    let config = mr_config();
    let panel = data.to_panel().unwrap();
    let inference = PanelInference {
        sandwich: Some(SandwichMode::Base),
        bootstrap: None,
    };
    let repeated = estimate_repeated(&panel, &[(0, 1)], &config, &inference).unwrap();
    let fit = fit_mr(&data, &config, None, None).unwrap();
    let base = sandwich_bands(&data, &fit, K, SandwichMode::Base).unwrap();
    assert_eq!(repeated.sandwich.unwrap(), base);
    assert_eq!(repeated.averaged.psi, fit.curve.psi);
}

#[test]
fn estimating_equations_vanish_at_the_estimate() {
    let data = benchmark_data(800, 5);
    let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
    let system = equation_system(&data, &fit, K, SandwichMode::Base).unwrap();
    let n = data.n() as f64;
    for gamma in &system.gamma {
        for col in 0..4 {
            let values: Vec<f64> = (0..gamma.rows()).map(|i| gamma[(i, col)]).collect();
            let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            let total: f64 = values.iter().sum();
            assert!(total.abs() <= 1e-6 * n * scale, "column {col}: {total}");
        }
    }
}

#[test]
fn sandwich_covariances_are_symmetric_psd() {
    let data = benchmark_data(500, 6);
    let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
    for mode in [SandwichMode::Base, SandwichMode::Augmented] {
        let bands = sandwich_bands(&data, &fit, K, mode).unwrap();
        assert!(bands.floored.is_empty());
        for (k, cov) in bands.covariance.iter().enumerate() {
            assert!(cov.asymmetry() < 1e-10);
            for j in 0..cov.rows() {
                assert!(cov[(j, j)] >= 0.0);
            }
            assert!(bands.lower[k] <= bands.psi[k] && bands.psi[k] <= bands.upper[k]);
        }
    }
}

#[test]
fn duplicating_every_unit_halves_the_variance() {
    let data = benchmark_data(400, 7);
    let grid = linspace(1.0, 5.0, 12);
    let mut config = mr_config();
    config.bandwidth = Some(1.6);
    config.grid = GridSpec::Explicit(grid.clone());
    let doubled = {
        let idx: Vec<usize> = (0..data.n()).chain(0..data.n()).collect();
        let mut x = Vec::new();
        for &i in &idx {
            x.extend_from_slice(data.x_row(i));
        }
        TwoPeriodDataset::new(
            idx.iter()
                .enumerate()
                .map(|(k, _)| format!("d{k}"))
                .collect(),
            data.covariate_names().to_vec(),
            x,
            idx.iter().map(|&i| data.treated(i)).collect(),
            idx.iter().map(|&i| data.dose(i)).collect(),
            idx.iter().map(|&i| data.y0()[i]).collect(),
            idx.iter().map(|&i| data.y1()[i]).collect(),
            (0, 1),
        )
        .unwrap()
    };
    let single = sandwich_bands(
        &data,
        &fit_mr(&data, &config, None, None).unwrap(),
        K,
        SandwichMode::Base,
    )
    .unwrap();
    let double = sandwich_bands(
        &doubled,
        &fit_mr(&doubled, &config, None, None).unwrap(),
        K,
        SandwichMode::Base,
    )
    .unwrap();
    for (a, b) in single.variance.iter().zip(&double.variance) {
        assert!((b / a - 0.5).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn augmented_mode_needs_a_normal_dose_density() {
    let data = benchmark_data(300, 8);
    let mut specs = scenario_specs(&Misspecification::new());
    specs.pi_d = Some(
        specs
            .pi_d
            .unwrap()
            .with_density(didcurve::nuisance::DensityForm::Kde),
    );
    let config = EstimatorConfig::new(Method::Mr, specs);
    let fit = fit_mr(&data, &config, None, None).unwrap();
    assert!(sandwich_bands(&data, &fit, K, SandwichMode::Augmented).is_err());
    assert!(sandwich_bands(&data, &fit, K, SandwichMode::Base).is_ok());
}

#[test]
fn comparator_curves_ignore_irrelevant_specs() {
    let data = benchmark_data(500, 9);
    let all = Misspecification::from([
        NuisanceKind::PiA,
        NuisanceKind::PiD,
        NuisanceKind::Mu1,
        NuisanceKind::Mu0,
    ]);
    let outcome = Misspecification::from([NuisanceKind::Mu1, NuisanceKind::Mu0]);
    let propensity = Misspecification::from([NuisanceKind::PiA, NuisanceKind::PiD]);
    let run = |method: Method, mis: &Misspecification| {
        estimate_curve(&data, &EstimatorConfig::new(method, scenario_specs(mis))).unwrap()
    };
    assert_eq!(
        run(Method::Or, &Misspecification::new()).psi,
        run(Method::Or, &propensity).psi
    );
    assert_eq!(run(Method::Or, &outcome).psi, run(Method::Or, &all).psi);
    assert_eq!(
        run(Method::Ipw, &Misspecification::new()).psi,
        run(Method::Ipw, &outcome).psi
    );
    assert_eq!(
        run(Method::Ipw, &propensity).psi,
        run(Method::Ipw, &all).psi
    );
    assert_ne!(
        run(Method::Or, &Misspecification::new()).psi,
        run(Method::Or, &outcome).psi
    );
}

#[test]
fn theta_curve_integrates_to_the_mean_pseudo_outcome() {
    let data = benchmark_data(1200, 10);
    let fit = fit_mr(&data, &mr_config(), None, None).unwrap();
    assert!(fit.pseudo.xi.treated.len() >= 500);
    let grid = &fit.curve.grid;
    let f = fit.models.f_marginal().unwrap();
    let fs: Vec<f64> = grid.iter().map(|&d| f.try_eval(d).unwrap()).collect();
    let weighted: Vec<f64> = fs
        .iter()
        .zip(&fit.curve.theta_curve)
        .map(|(a, b)| a * b)
        .collect();
    let smoothed = trapezoid(grid, &weighted) / trapezoid(grid, &fs);
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let inside: Vec<f64> = fit
        .pseudo
        .xi
        .doses
        .iter()
        .zip(&fit.pseudo.xi.xi)
        .filter(|(&d, _)| d >= lo && d <= hi)
        .map(|(_, &v)| v)
        .collect();
    let plain = inside.iter().sum::<f64>() / inside.len() as f64;
    assert!((smoothed - plain).abs() < 0.05, "{smoothed} vs {plain}");
}

#[test]
fn weighted_fits_need_matching_weights() {
    let data = benchmark_data(200, 11);
    assert!(estimate_curve_weighted(&data, &mr_config(), Some(&[1.0; 3]), None).is_err());
    let mut config = mr_config();
    config.specs = NuisanceSpecs::default();
    assert!(estimate_curve(&data, &config).is_err());
}

proptest::proptest! {
    #[test]
    fn bootstrap_group_sums_match_group_sizes(
        treatment in proptest::collection::vec(proptest::bool::ANY, 2..200),
        seed in 0u64..1000,
        replicate in 0u64..50,
    ) {
        let w: Vec<f64> = bootstrap_weights(&treatment, seed, replicate, WeightStream::Exponential);
        let n_a = treatment.iter().filter(|&&a| a).count() as f64;
        let n_c = treatment.len() as f64 - n_a;
        let s_a: f64 = treatment.iter().zip(&w).filter(|(&a, _)| a).map(|(_, &v)| v).sum();
        let s_c: f64 = treatment.iter().zip(&w).filter(|(&a, _)| !a).map(|(_, &v)| v).sum();
        proptest::prop_assert!((s_a - n_a).abs() < 1e-10);
        proptest::prop_assert!((s_c - n_c).abs() < 1e-10);
    }
}
