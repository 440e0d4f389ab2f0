//! Scenario runner over nuisance-specification permutations and the
//! integrated evaluation metrics.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{
    combine_mr, curve_from_fitted, mr_control_component, mr_dose_component, DoseComponent,
    EffectCurveEstimate, EstimatorConfig, GridSpec, Method, MrFit,
};
use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::inference::{
    equation_system, stacked_sandwich, weighted_bootstrap, BootstrapConfig, SandwichMode,
};
use crate::nuisance::{
    fit_mu0, fit_mu1, fit_pi_a, fit_pi_d, CovariateMap, DensityForm, FittedNuisances, NuisanceKind,
    NuisanceSpec, NuisanceSpecs, TermSpec,
};
use crate::pseudo::{treated_share, PseudoOutcomeSet, Theta0Output};
use crate::rng::splitmix64;
use crate::simulation::dgp::Dgp;
use crate::simulation::truth::{
    ground_truth_with_points, GroundTruth, DEFAULT_SUPER_N, GRID_POINTS,
};

/// Share of failed replicates above which a report is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.1;

pub type Misspecification = BTreeSet<NuisanceKind>;

/// Which intervals to compute, and for which methods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferenceSettings {
    pub sandwich: Option<SandwichMode>,
    /// Bootstrap replicates per simulated dataset.
    pub bootstrap: Option<usize>,
    /// Methods that receive intervals; the sandwich applies to MR only.
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub replicates: usize,
    pub misspecified: Misspecification,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub inference: InferenceSettings,
    pub grid_points: usize,
    pub super_n: usize,
    pub dgp: Dgp,
    /// Fixed bandwidth for the kernel methods; selected per replicate when absent.
    pub bandwidth: Option<f64>,
    /// Keep every replicate curve in the report.
    pub keep_curves: bool,
}

impl ScenarioConfig {
    pub fn new(n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            replicates,
            misspecified: Misspecification::new(),
            seed,
            methods: Method::ALL.to_vec(),
            inference: InferenceSettings::default(),
            grid_points: GRID_POINTS,
            super_n: DEFAULT_SUPER_N,
            dgp: Dgp::benchmark(),
            bandwidth: None,
            keep_curves: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.replicates < 1 {
            problems.push("replicates must be at least 1".to_string());
        }
        if self.n < 50 {
            problems.push(format!("n must be at least 50, got {}", self.n));
        }
        if self.methods.is_empty() {
            problems.push("no methods selected".to_string());
        }
        if self.grid_points < 2 {
            problems.push("grid needs at least 2 points".to_string());
        }
        if self.inference.bootstrap.is_some_and(|b| b < 2) {
            problems.push("bootstrap needs at least 2 replicates".to_string());
        }
        if self.bandwidth.is_some_and(|h| !(h > 0.0) || !h.is_finite()) {
            problems.push("bandwidth must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// Regressor sets of the simulation study. Correct specifications use the
/// raw covariates; misspecified ones use the same terms on the
/// Kang-Schafer transform.
pub fn scenario_specs(misspecified: &Misspecification) -> NuisanceSpecs {
    let map = |k: NuisanceKind| {
        if misspecified.contains(&k) {
            CovariateMap::KangSchafer
        } else {
            CovariateMap::Identity
        }
    };
    let linear: Vec<TermSpec> = std::iter::once(TermSpec::INTERCEPT)
        .chain((0..4).map(TermSpec::covariate))
        .collect();
    let mut mu1_terms = linear.clone();
    mu1_terms.extend([
        TermSpec::dose_power(1),
        TermSpec::dose_times(1, 0),
        TermSpec::dose_times(1, 2),
        TermSpec::dose_power(3),
    ]);
    let spec = |k: NuisanceKind, terms: &[TermSpec]| {
        NuisanceSpec::parametric(k)
            .with_terms(terms.to_vec())
            .with_map(map(k))
    };
    NuisanceSpecs {
        pi_a: Some(spec(NuisanceKind::PiA, &linear)),
        pi_d: Some(spec(NuisanceKind::PiD, &linear).with_density(DensityForm::Normal)),
        mu1: Some(spec(NuisanceKind::Mu1, &mu1_terms)),
        mu0: Some(spec(NuisanceKind::Mu0, &linear)),
    }
}

/// All sixteen subsets of misspecified nuisances, by size then kind order.
pub fn all_permutations() -> Vec<Misspecification> {
    let mut out: Vec<Misspecification> = (0u8..16)
        .map(|bits| {
            NuisanceKind::ALL
                .iter()
                .enumerate()
                .filter(|(j, _)| bits & (1 << j) != 0)
                .map(|(_, &k)| k)
                .collect()
        })
        .collect();
    out.sort_by_key(|s| (s.len(), s.iter().copied().collect::<Vec<_>>()));
    out
}

/// Whether a permutation leaves each confounding source adjusted for by the
/// MR estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Robustness {
    /// Both the treated/control and the dose-level confounding are handled.
    Green,
    /// Exactly one of the two is not.
    Orange,
    /// Neither is.
    Red,
}

pub fn mr_robustness(misspecified: &Misspecification) -> Robustness {
    let control_broken =
        misspecified.contains(&NuisanceKind::PiA) && misspecified.contains(&NuisanceKind::Mu0);
    let dose_broken =
        misspecified.contains(&NuisanceKind::PiD) && misspecified.contains(&NuisanceKind::Mu1);
    match (control_broken, dose_broken) {
        (false, false) => Robustness::Green,
        (true, true) => Robustness::Red,
        _ => Robustness::Orange,
    }
}

pub fn permutation_label(misspecified: &Misspecification) -> String {
    if misspecified.is_empty() {
        "none".to_string()
    } else {
        misspecified
            .iter()
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalMetrics {
    /// Density-weighted pointwise coverage, in percent.
    pub coverage: f64,
    /// Density-weighted mean interval width.
    pub width: f64,
    /// Replicates that produced an interval.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub successes: usize,
    pub failures: usize,
    pub flagged: bool,
    /// `sum_k w_k |mean_r psi_r(delta_k) - psi(delta_k)|`.
    pub integrated_bias: f64,
    /// `sum_k w_k sqrt(mean_r (psi_r(delta_k) - psi(delta_k))^2)`.
    pub integrated_rmse: f64,
    /// `sum_k w_k sd_r(psi_r(delta_k))`.
    pub integrated_sd: f64,
    pub sandwich: Option<IntervalMetrics>,
    pub bootstrap: Option<IntervalMetrics>,
    pub mean_curve: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub label: String,
    pub misspecified: Vec<String>,
    pub robustness: Robustness,
    pub n: usize,
    pub replicates: usize,
    pub grid: Vec<f64>,
    pub psi_true: Vec<f64>,
    pub density_weights: Vec<f64>,
    pub methods: Vec<MethodReport>,
}

impl ScenarioReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method.name())
    }
}

/// One replicate's output for one estimator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicateOutcome {
    pub psi: Vec<f64>,
    pub sandwich: Option<(Vec<f64>, Vec<f64>)>,
    pub bootstrap: Option<(Vec<f64>, Vec<f64>)>,
}

fn interval_metrics(
    truth: &GroundTruth,
    bands: &[&(Vec<f64>, Vec<f64>)],
) -> Option<IntervalMetrics> {
    if bands.is_empty() {
        return None;
    }
    let r = bands.len() as f64;
    let (mut coverage, mut width) = (0.0, 0.0);
    for (k, (&psi, &w)) in truth.psi.iter().zip(&truth.density_weights).enumerate() {
        let covered = bands
            .iter()
            .filter(|(lo, hi)| lo[k] <= psi && psi <= hi[k])
            .count() as f64;
        coverage += w * covered / r;
        width += w * bands.iter().map(|(lo, hi)| hi[k] - lo[k]).sum::<f64>() / r;
    }
    Some(IntervalMetrics {
        coverage: 100.0 * coverage,
        width,
        replicates: bands.len(),
    })
}

/// Integrated metrics of one estimator across replicates; `None` marks a
/// failed replicate.
pub fn method_report(
    name: &str,
    truth: &GroundTruth,
    outcomes: &[Option<ReplicateOutcome>],
    keep_curves: bool,
) -> MethodReport {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let failures = outcomes.len() - ok.len();
    let k = truth.grid.len();
    let r = ok.len() as f64;
    let mut mean_curve = vec![f64::NAN; k];
    let (mut bias, mut rmse, mut sd) = (f64::NAN, f64::NAN, f64::NAN);
    if !ok.is_empty() {
        (bias, rmse, sd) = (0.0, 0.0, 0.0);
        for j in 0..k {
            let mean = ok.iter().map(|o| o.psi[j]).sum::<f64>() / r;
            let mse = ok
                .iter()
                .map(|o| (o.psi[j] - truth.psi[j]).powi(2))
                .sum::<f64>()
                / r;
            let var = ok.iter().map(|o| (o.psi[j] - mean).powi(2)).sum::<f64>() / r;
            let w = truth.density_weights[j];
            mean_curve[j] = mean;
            bias += w * (mean - truth.psi[j]).abs();
            rmse += w * mse.sqrt();
            sd += w * var.sqrt();
        }
    }
    let sandwich: Vec<_> = ok.iter().filter_map(|o| o.sandwich.as_ref()).collect();
    let bootstrap: Vec<_> = ok.iter().filter_map(|o| o.bootstrap.as_ref()).collect();
    MethodReport {
        method: name.to_string(),
        successes: ok.len(),
        failures,
        flagged: failures as f64 > FAILURE_FLAG_RATE * outcomes.len() as f64,
        integrated_bias: bias,
        integrated_rmse: rmse,
        integrated_sd: sd,
        sandwich: interval_metrics(truth, &sandwich),
        bootstrap: interval_metrics(truth, &bootstrap),
        mean_curve,
        curves: keep_curves.then(|| ok.iter().map(|o| o.psi.clone()).collect()),
    }
}

fn truth_for(config: &ScenarioConfig) -> Result<GroundTruth> {
    ground_truth_with_points(&config.dgp, config.seed, config.super_n, config.grid_points)
}

/// Runs the configured methods on `config.replicates` simulated datasets.
pub fn run_study(config: &ScenarioConfig) -> Result<ScenarioReport> {
    let mut reports = run_permutation_study(config, std::slice::from_ref(&config.misspecified))?;
    Ok(reports.remove(0))
}

/// Runs several misspecification permutations on the same datasets, fitting
/// each nuisance variant once per replicate and sharing the dose-side and
/// control-side components of the MR estimator across permutations.
pub fn run_permutation_study(
    config: &ScenarioConfig,
    permutations: &[Misspecification],
) -> Result<Vec<ScenarioReport>> {
    config.validate()?;
    if permutations.is_empty() {
        return Err(Error::InvalidArgument("no permutations to run".into()));
    }
    let truth = truth_for(config)?;
    let per_replicate: Vec<Vec<Vec<Option<ReplicateOutcome>>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, permutations, &truth, r as u64))
        .collect();
    Ok(permutations
        .iter()
        .enumerate()
        .map(|(p, perm)| {
            let methods = config
                .methods
                .iter()
                .enumerate()
                .map(|(m, method)| {
                    let outcomes: Vec<Option<ReplicateOutcome>> =
                        per_replicate.iter().map(|rep| rep[p][m].clone()).collect();
                    method_report(method.name(), &truth, &outcomes, config.keep_curves)
                })
                .collect();
            ScenarioReport {
                label: permutation_label(perm),
                misspecified: perm.iter().map(|k| k.name().to_string()).collect(),
                robustness: mr_robustness(perm),
                n: config.n,
                replicates: config.replicates,
                grid: truth.grid.clone(),
                psi_true: truth.psi.clone(),
                density_weights: truth.density_weights.clone(),
                methods,
            }
        })
        .collect())
}

/// Runs an arbitrary estimator through the study loop; intended for
/// checking the metrics with known estimators.
pub fn run_custom_study<F>(
    config: &ScenarioConfig,
    name: &str,
    estimator: F,
) -> Result<ScenarioReport>
where
    F: Fn(&TwoPeriodDataset<f64>, &GroundTruth) -> Result<ReplicateOutcome> + Sync,
{
    config.validate()?;
    let truth = truth_for(config)?;
    let outcomes: Vec<Option<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let data = config
                .dgp
                .generate::<f64>(config.n, config.seed, r as u64)
                .ok()?;
            estimator(&data, &truth).ok()
        })
        .collect();
    Ok(ScenarioReport {
        label: name.to_string(),
        misspecified: config
            .misspecified
            .iter()
            .map(|k| k.name().to_string())
            .collect(),
        robustness: mr_robustness(&config.misspecified),
        n: config.n,
        replicates: config.replicates,
        grid: truth.grid.clone(),
        psi_true: truth.psi.clone(),
        density_weights: truth.density_weights.clone(),
        methods: vec![method_report(name, &truth, &outcomes, config.keep_curves)],
    })
}

/// Seed of the bootstrap inside simulated replicate `r`.
pub fn bootstrap_seed(seed: u64, replicate: u64) -> u64 {
    splitmix64(seed ^ splitmix64(replicate.wrapping_add(0xB007)))
}

fn variant_bits(method: Method, perm: &Misspecification) -> u8 {
    method
        .required()
        .iter()
        .enumerate()
        .filter(|(_, k)| perm.contains(k))
        .fold(0, |acc, (j, _)| acc | (1 << j))
}

struct Fits {
    fits: HashMap<(NuisanceKind, bool), Result<FittedNuisances<f64>>>,
}

impl Fits {
    /// Fits every nuisance variant the permutations and methods need.
    fn new(
        data: &TwoPeriodDataset<f64>,
        permutations: &[Misspecification],
        methods: &[Method],
    ) -> Self {
        let mut fits = HashMap::new();
        for perm in permutations {
            for method in methods {
                for &kind in method.required() {
                    let wrong = perm.contains(&kind);
                    fits.entry((kind, wrong)).or_insert_with(|| {
                        let mis: Misspecification = if wrong {
                            [kind].into()
                        } else {
                            Misspecification::new()
                        };
                        let specs = scenario_specs(&mis);
                        let spec = specs.get(kind).expect("all scenario specs present");
                        let mut out = FittedNuisances::default();
                        match kind {
                            NuisanceKind::PiA => {
                                fit_pi_a(data, spec, None).map(|m| out.pi_a = Some(Arc::new(m)))
                            }
                            NuisanceKind::PiD => {
                                fit_pi_d(data, spec, None).map(|m| out.pi_d = Some(Arc::new(m)))
                            }
                            NuisanceKind::Mu1 => {
                                fit_mu1(data, spec, None).map(|m| out.mu1 = Some(Arc::new(m)))
                            }
                            NuisanceKind::Mu0 => {
                                fit_mu0(data, spec, None).map(|m| out.mu0 = Some(Arc::new(m)))
                            }
                        }
                        .map(|_| out)
                    });
                }
            }
        }
        Self { fits }
    }

    fn assemble(
        &self,
        kinds: &[NuisanceKind],
        perm: &Misspecification,
    ) -> Result<FittedNuisances<f64>> {
        let mut out = FittedNuisances::default();
        for &kind in kinds {
            let fit = self.fits[&(kind, perm.contains(&kind))]
                .as_ref()
                .map_err(Clone::clone)?;
            match kind {
                NuisanceKind::PiA => out.pi_a = fit.pi_a.clone(),
                NuisanceKind::PiD => out.pi_d = fit.pi_d.clone(),
                NuisanceKind::Mu1 => out.mu1 = fit.mu1.clone(),
                NuisanceKind::Mu0 => out.mu0 = fit.mu0.clone(),
            }
        }
        Ok(out)
    }
}

fn run_replicate(
    config: &ScenarioConfig,
    permutations: &[Misspecification],
    truth: &GroundTruth,
    replicate: u64,
) -> Vec<Vec<Option<ReplicateOutcome>>> {
    let data = match config.dgp.generate::<f64>(config.n, config.seed, replicate) {
        Ok(d) => d,
        Err(_) => return vec![vec![None; config.methods.len()]; permutations.len()],
    };
    let fits = Fits::new(&data, permutations, &config.methods);
    let grid = truth.grid.clone();
    let mut curves: HashMap<(Method, u8), Option<EffectCurveEstimate<f64>>> = HashMap::new();
    let mut doses: HashMap<(Method, bool, bool), Option<DoseComponent<f64>>> = HashMap::new();
    let mut controls: HashMap<(bool, bool), Option<Theta0Output<f64>>> = HashMap::new();
    let estimator = |method: Method, perm: &Misspecification| {
        let mut c = EstimatorConfig::new(method, scenario_specs(perm));
        c.grid = GridSpec::Explicit(grid.clone());
        c.bandwidth = config.bandwidth;
        c
    };

    permutations
        .iter()
        .map(|perm| {
            let wrong = |k: NuisanceKind| perm.contains(&k);
            config
                .methods
                .iter()
                .map(|&method| {
                    let est = estimator(method, perm);
                    let curve = match method {
                        Method::Mr | Method::MrParametric => {
                            let dose = doses
                                .entry((method, wrong(NuisanceKind::Mu1), wrong(NuisanceKind::PiD)))
                                .or_insert_with(|| {
                                    let fitted = fits
                                        .assemble(&[NuisanceKind::Mu1, NuisanceKind::PiD], perm)
                                        .ok()?;
                                    mr_dose_component(&data, &est, &fitted, None, &grid).ok()
                                })
                                .clone();
                            let control = controls
                                .entry((wrong(NuisanceKind::PiA), wrong(NuisanceKind::Mu0)))
                                .or_insert_with(|| {
                                    let fitted = fits
                                        .assemble(&[NuisanceKind::PiA, NuisanceKind::Mu0], perm)
                                        .ok()?;
                                    mr_control_component(&data, &fitted, None).ok()
                                })
                                .clone();
                            match (dose, control) {
                                (Some(d), Some(c)) => {
                                    Some((combine_mr(method, grid.clone(), &d, &c), Some((d, c))))
                                }
                                _ => None,
                            }
                        }
                        _ => curves
                            .entry((method, variant_bits(method, perm)))
                            .or_insert_with(|| {
                                let fitted = fits.assemble(method.required(), perm).ok()?;
                                curve_from_fitted(&data, &est, &fitted, None, grid.clone()).ok()
                            })
                            .clone()
                            .map(|c| (c, None)),
                    };
                    let (curve, parts) = curve?;
                    let mut outcome = ReplicateOutcome {
                        psi: curve.psi.clone(),
                        ..ReplicateOutcome::default()
                    };
                    if config.inference.methods.contains(&method) {
                        if let (Some(mode), Some((dose, control)), Method::Mr) =
                            (config.inference.sandwich, parts, method)
                        {
                            outcome.sandwich = sandwich_for(
                                &data,
                                &fits,
                                perm,
                                &est,
                                curve.clone(),
                                dose,
                                control,
                                mode,
                            );
                        }
                        if let Some(b) = config.inference.bootstrap {
                            let boot =
                                BootstrapConfig::new(b, bootstrap_seed(config.seed, replicate));
                            outcome.bootstrap = weighted_bootstrap(&data, &est, &curve, &boot)
                                .ok()
                                .map(|r| (r.lower, r.upper));
                        }
                    }
                    Some(outcome)
                })
                .collect()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn sandwich_for(
    data: &TwoPeriodDataset<f64>,
    fits: &Fits,
    perm: &Misspecification,
    est: &EstimatorConfig<f64>,
    curve: EffectCurveEstimate<f64>,
    dose: DoseComponent<f64>,
    control: Theta0Output<f64>,
    mode: SandwichMode,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let fitted = fits.assemble(&NuisanceKind::ALL, perm).ok()?;
    let fit = MrFit {
        fitted,
        models: dose.models,
        pseudo: PseudoOutcomeSet {
            p_a1: treated_share(data, None),
            xi: dose.xi,
            theta: control,
        },
        curve,
    };
    let system = equation_system(data, &fit, est.kernel, mode).ok()?;
    let bands = stacked_sandwich(&[system]).ok()?;
    Some((bands.lower, bands.upper))
}
