//! Effect-curve estimators: the multiply robust estimator and comparators.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::nuisance::{
    marginal_density, ExtrapolationPolicy, FittedNuisances, NuisanceKind, NuisanceModelSet,
    NuisanceSpecs,
};
use crate::numeric::stats::{quantile_sorted, sort_floats};
use crate::numeric::{
    default_bandwidth_grid, fit_wls, local_linear_fit_weighted, select_bandwidth_weighted,
    KernelSpec, Matrix,
};
use crate::pseudo::{
    compute_theta0, compute_xi, normalize_weights_with, treated_share, PseudoOutcomeSet,
    Theta0Output, XiOutput,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Multiply robust: local linear regression of the pseudo-outcome.
    Mr,
    /// Multiply robust with a polynomial regression of the pseudo-outcome.
    MrParametric,
    /// Outcome regression plug-in.
    Or,
    /// Inverse probability weighting.
    Ipw,
    /// Unadjusted local linear trend curve minus the control mean trend.
    Naive,
    /// Linear two-way fixed effects with a dose interaction.
    Twfe,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mr,
        Method::MrParametric,
        Method::Or,
        Method::Ipw,
        Method::Naive,
        Method::Twfe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mr => "MR",
            Method::MrParametric => "MR_PARAMETRIC",
            Method::Or => "OR",
            Method::Ipw => "IPW",
            Method::Naive => "NAIVE",
            Method::Twfe => "TWFE",
        }
    }

    /// Nuisance functions the method fits.
    pub fn required(self) -> &'static [NuisanceKind] {
        match self {
            Method::Mr | Method::MrParametric => &NuisanceKind::ALL,
            Method::Or => &[NuisanceKind::Mu1, NuisanceKind::Mu0],
            Method::Ipw => &[NuisanceKind::PiA, NuisanceKind::PiD],
            Method::Naive | Method::Twfe => &[],
        }
    }

    pub fn uses_bandwidth(self) -> bool {
        matches!(self, Method::Mr | Method::Ipw | Method::Naive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == up)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Evaluation grid of dose values.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec<T> {
    /// `points` evenly spaced values between the `lower` and `upper`
    /// quantiles of the treated doses.
    Quantiles {
        points: usize,
        lower: T,
        upper: T,
    },
    Explicit(Vec<T>),
}

impl<T: Real> Default for GridSpec<T> {
    fn default() -> Self {
        GridSpec::Quantiles {
            points: 50,
            lower: T::lit(0.1),
            upper: T::lit(0.9),
        }
    }
}

impl<T: Real> GridSpec<T> {
    pub fn resolve(&self, data: &TwoPeriodDataset<T>) -> Result<Vec<T>> {
        let grid = match self {
            GridSpec::Quantiles {
                points,
                lower,
                upper,
            } => {
                let mut d = data.treated_doses();
                if d.is_empty() {
                    return Err(Error::InsufficientData(
                        "no treated doses for the grid".into(),
                    ));
                }
                if !(*lower < *upper) {
                    return Err(Error::InvalidArgument(
                        "grid quantiles must increase".into(),
                    ));
                }
                sort_floats(&mut d);
                let lo = quantile_sorted(&d, *lower);
                let hi = quantile_sorted(&d, *upper);
                crate::numeric::stats::linspace(lo, hi, *points)
            }
            GridSpec::Explicit(g) => g.clone(),
        };
        check_grid(&grid)?;
        Ok(grid)
    }
}

fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty dose grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "dose grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Default 50-point grid between the 10th and 90th treated-dose percentiles.
pub fn default_grid<T: Real>(data: &TwoPeriodDataset<T>) -> Result<Vec<T>> {
    GridSpec::default().resolve(data)
}

/// Everything needed to reproduce one curve estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig<T> {
    pub method: Method,
    pub specs: NuisanceSpecs,
    pub grid: GridSpec<T>,
    /// Fixed bandwidth; selected by leave-one-out cross-validation when absent.
    pub bandwidth: Option<T>,
    /// Candidate bandwidths; the default grid is used when absent.
    pub bandwidth_candidates: Option<Vec<T>>,
    pub kernel: KernelSpec,
    /// Dose powers of the MR_PARAMETRIC regression (an intercept is always added).
    pub parametric_powers: Vec<u32>,
    pub extrapolation: ExtrapolationPolicy,
}

impl<T: Real> EstimatorConfig<T> {
    pub fn new(method: Method, specs: NuisanceSpecs) -> Self {
        Self {
            method,
            specs,
            grid: GridSpec::default(),
            bandwidth: None,
            bandwidth_candidates: None,
            kernel: KernelSpec::Epanechnikov,
            parametric_powers: vec![1, 3],
            extrapolation: ExtrapolationPolicy::Clamp,
        }
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    /// Checks that every nuisance the method needs has a valid specification.
    pub fn validate(&self, p: usize) -> Result<()> {
        for &k in self.method.required() {
            self.specs.require(k)?.validate(p)?;
        }
        if let Some(h) = self.bandwidth {
            if !(h > T::zero()) || !h.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive, got {h}"
                )));
            }
        }
        if self.method == Method::MrParametric && self.parametric_powers.contains(&0) {
            return Err(Error::InvalidArgument(
                "parametric dose powers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Specs restricted to the nuisances this method uses.
    pub fn required_specs(&self) -> Result<NuisanceSpecs> {
        let mut out = NuisanceSpecs::default();
        for &k in self.method.required() {
            *out.get_mut(k) = Some(self.specs.require(k)?.clone());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Treated doses clamped to the `m`/`f` tabulation.
    pub clamped: usize,
    /// Whether the propensity IRLS converged, when fitted.
    pub propensity_converged: Option<bool>,
    /// Some least-squares fit needed a ridge.
    pub ridge_applied: bool,
    /// The bandwidth came from cross-validation.
    pub bandwidth_selected: bool,
    /// The sandwich variance was floored at zero at these grid indices.
    pub variance_floored: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurveEstimate<T> {
    pub method: Method,
    pub grid: Vec<T>,
    /// `psi[k] = theta_curve[k] - theta0` except for TWFE.
    pub psi: Vec<T>,
    pub theta_curve: Vec<T>,
    pub theta0: T,
    pub bandwidth: Option<T>,
    pub ci_lower: Option<Vec<T>>,
    pub ci_upper: Option<Vec<T>>,
    pub diagnostics: Diagnostics,
}

impl<T: Real> EffectCurveEstimate<T> {
    fn from_theta(method: Method, grid: Vec<T>, theta_curve: Vec<T>, theta0: T) -> Self {
        let psi = theta_curve.iter().map(|&t| t - theta0).collect();
        Self {
            method,
            grid,
            psi,
            theta_curve,
            theta0,
            bandwidth: None,
            ci_lower: None,
            ci_upper: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn with_bands(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        self.ci_lower = Some(lower);
        self.ci_upper = Some(upper);
        self
    }
}

/// Bandwidth from the configuration, or by leave-one-out selection on `(x, y)`.
pub fn choose_bandwidth<T: Real>(
    config: &EstimatorConfig<T>,
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
) -> Result<(T, bool)> {
    if let Some(h) = config.bandwidth {
        return Ok((h, false));
    }
    if let Some(candidates) = &config.bandwidth_candidates {
        return Ok((
            select_bandwidth_weighted(xs, ys, weights, candidates, config.kernel)?,
            true,
        ));
    }
    let candidates = default_bandwidth_grid(xs, weights)?;
    match select_bandwidth_weighted(xs, ys, weights, &candidates, config.kernel) {
        Err(Error::NoFeasibleBandwidth) => {
            // An isolated dose can defeat every default candidate; continue
            // the log-spaced grid upward for as many steps again.
            let ratio = candidates[1] / candidates[0];
            let top = candidates[candidates.len() - 1];
            let extended: Vec<T> = (1..=candidates.len() as i32)
                .map(|k| top * ratio.powi(k))
                .collect();
            Ok((
                select_bandwidth_weighted(xs, ys, weights, &extended, config.kernel)?,
                true,
            ))
        }
        other => Ok((other?, true)),
    }
}

/// Local linear intercepts at every grid point.
pub fn local_linear_curve<T: Real>(
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
    grid: &[T],
    h: T,
    kernel: KernelSpec,
) -> Result<Vec<T>> {
    grid.iter()
        .map(|&d| local_linear_fit_weighted(xs, ys, weights, h, d, kernel).map(|(a, _)| a))
        .collect()
}

fn subset<T: Real>(values: Option<&[T]>, idx: &[usize]) -> Option<Vec<T>> {
    values.map(|v| idx.iter().map(|&i| v[i]).collect())
}

/// Intermediate products of the MR pipeline, kept for inference.
#[derive(Debug, Clone)]
pub struct MrFit<T> {
    pub fitted: FittedNuisances<T>,
    pub models: NuisanceModelSet<T>,
    pub pseudo: PseudoOutcomeSet<T>,
    pub curve: EffectCurveEstimate<T>,
}

fn diagnostics_of<T: Real>(fitted: &FittedNuisances<T>) -> Diagnostics {
    Diagnostics {
        propensity_converged: fitted.pi_a.as_ref().map(|m| m.converged()),
        ridge_applied: fitted.mu1.as_ref().is_some_and(|m| m.ridge_applied())
            || fitted.mu0.as_ref().is_some_and(|m| m.ridge_applied())
            || fitted
                .pi_d
                .as_ref()
                .is_some_and(|m| m.mean_model().ridge_applied()),
        ..Diagnostics::default()
    }
}

/// Regression of the pseudo-outcomes on dose: local linear for MR,
/// polynomial least squares for MR_PARAMETRIC.
pub fn mr_curve_from_xi<T: Real>(
    config: &EstimatorConfig<T>,
    xi: &XiOutput<T>,
    grid: &[T],
    weights: Option<&[T]>,
) -> Result<(Vec<T>, Option<T>, bool)> {
    let tw = subset(weights, &xi.treated);
    let (xs, ys) = (&xi.doses, &xi.xi);
    match config.method {
        Method::MrParametric => Ok((
            polynomial_curve(xs, ys, tw.as_deref(), grid, &config.parametric_powers)?,
            None,
            false,
        )),
        _ => {
            let (h, selected) = choose_bandwidth(config, xs, ys, tw.as_deref())?;
            Ok((
                local_linear_curve(xs, ys, tw.as_deref(), grid, h, config.kernel)?,
                Some(h),
                selected,
            ))
        }
    }
}

fn polynomial_curve<T: Real>(
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
    grid: &[T],
    powers: &[u32],
) -> Result<Vec<T>> {
    let row = |d: T| -> Vec<T> {
        std::iter::once(T::one())
            .chain(powers.iter().map(|&p| d.powi(p as i32)))
            .collect()
    };
    let rows: Vec<Vec<T>> = xs.iter().map(|&d| row(d)).collect();
    let design = Matrix::from_rows(&rows)?;
    let w = weights.map_or_else(|| vec![T::one(); xs.len()], <[T]>::to_vec);
    let fit = fit_wls(&design, ys, &w)?;
    Ok(grid.iter().map(|&d| fit.predict(&row(d))).collect())
}

/// Dose side of the MR estimator: marginals, pseudo-outcomes and the
/// regression curve. Needs fitted `mu1` and `pi_d`.
#[derive(Debug, Clone)]
pub struct DoseComponent<T> {
    pub models: NuisanceModelSet<T>,
    pub xi: XiOutput<T>,
    pub theta_curve: Vec<T>,
    pub bandwidth: Option<T>,
    pub selected: bool,
}

pub fn mr_dose_component<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    fitted: &FittedNuisances<T>,
    weights: Option<&[T]>,
    grid: &[T],
) -> Result<DoseComponent<T>> {
    let models = fitted.marginalized(data, grid, weights)?;
    let xi = compute_xi(data, &models, config.extrapolation, weights)?;
    let (theta_curve, bandwidth, selected) = mr_curve_from_xi(config, &xi, grid, weights)?;
    Ok(DoseComponent {
        models,
        xi,
        theta_curve,
        bandwidth,
        selected,
    })
}

/// Control side of the MR estimator. Needs fitted `pi_a` and `mu0`.
pub fn mr_control_component<T: Real>(
    data: &TwoPeriodDataset<T>,
    fitted: &FittedNuisances<T>,
    weights: Option<&[T]>,
) -> Result<Theta0Output<T>> {
    compute_theta0(data, &fitted.model_set(), weights)
}

/// MR curve from its two components.
pub fn combine_mr<T: Real>(
    method: Method,
    grid: Vec<T>,
    dose: &DoseComponent<T>,
    control: &Theta0Output<T>,
) -> EffectCurveEstimate<T> {
    let mut curve =
        EffectCurveEstimate::from_theta(method, grid, dose.theta_curve.clone(), control.theta0());
    curve.bandwidth = dose.bandwidth;
    curve.diagnostics.clamped = dose.xi.clamped;
    curve.diagnostics.bandwidth_selected = dose.selected;
    curve
}

fn resolve_grid<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    grid: Option<&[T]>,
) -> Result<Vec<T>> {
    match grid {
        Some(g) => {
            check_grid(g)?;
            Ok(g.to_vec())
        }
        None => config.grid.resolve(data),
    }
}

fn check_weights<T: Real>(data: &TwoPeriodDataset<T>, weights: Option<&[T]>) -> Result<()> {
    match weights {
        Some(w) if w.len() != data.n() => Err(Error::Dimension(format!(
            "{} unit weights for {} units",
            w.len(),
            data.n()
        ))),
        _ => Ok(()),
    }
}

/// Runs the MR or MR_PARAMETRIC pipeline and keeps its intermediate products.
pub fn fit_mr<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    weights: Option<&[T]>,
    grid: Option<&[T]>,
) -> Result<MrFit<T>> {
    if !matches!(config.method, Method::Mr | Method::MrParametric) {
        return Err(Error::InvalidArgument(format!(
            "{} is not a multiply robust method",
            config.method
        )));
    }
    check_weights(data, weights)?;
    config.validate(data.p())?;
    let grid = resolve_grid(data, config, grid)?;
    let fitted = FittedNuisances::fit(data, &config.required_specs()?, weights)?;
    let dose = mr_dose_component(data, config, &fitted, weights, &grid)?;
    let control = mr_control_component(data, &fitted, weights)?;
    let mut curve = combine_mr(config.method, grid, &dose, &control);
    curve.diagnostics = Diagnostics {
        clamped: dose.xi.clamped,
        bandwidth_selected: dose.selected,
        ..diagnostics_of(&fitted)
    };
    let pseudo = PseudoOutcomeSet {
        p_a1: treated_share(data, weights),
        xi: dose.xi,
        theta: control,
    };
    Ok(MrFit {
        fitted,
        models: dose.models,
        pseudo,
        curve,
    })
}

/// Estimates the effect curve with the configured method.
pub fn estimate_curve<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
) -> Result<EffectCurveEstimate<T>> {
    estimate_curve_weighted(data, config, None, None)
}

/// As [`estimate_curve`], with unit weights threaded through every fit and
/// mean, and optionally a fixed evaluation grid.
pub fn estimate_curve_weighted<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    weights: Option<&[T]>,
    grid: Option<&[T]>,
) -> Result<EffectCurveEstimate<T>> {
    check_weights(data, weights)?;
    if matches!(config.method, Method::Mr | Method::MrParametric) {
        return fit_mr(data, config, weights, grid).map(|f| f.curve);
    }
    config.validate(data.p())?;
    let grid = resolve_grid(data, config, grid)?;
    let fitted = FittedNuisances::fit(data, &config.required_specs()?, weights)?;
    curve_from_fitted(data, config, &fitted, weights, grid)
}

/// Curve of any method from already-fitted nuisances (ignored by NAIVE and
/// TWFE).
pub fn curve_from_fitted<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    fitted: &FittedNuisances<T>,
    weights: Option<&[T]>,
    grid: Vec<T>,
) -> Result<EffectCurveEstimate<T>> {
    check_weights(data, weights)?;
    check_grid(&grid)?;
    let treated = data.treated_indices();
    let tw = subset(weights, &treated);
    let doses = data.treated_doses();
    let u = |i: usize| weights.map_or(T::one(), |w| w[i]);

    match config.method {
        Method::Mr | Method::MrParametric => {
            let dose = mr_dose_component(data, config, fitted, weights, &grid)?;
            let control = mr_control_component(data, fitted, weights)?;
            let mut curve = combine_mr(config.method, grid, &dose, &control);
            curve.diagnostics = Diagnostics {
                clamped: dose.xi.clamped,
                bandwidth_selected: dose.selected,
                ..diagnostics_of(fitted)
            };
            Ok(curve)
        }
        Method::Or => {
            let models = fitted.model_set();
            let rows: Vec<&[T]> = treated.iter().map(|&i| data.x_row(i)).collect();
            let tws = tw.clone().unwrap_or_else(|| vec![T::one(); treated.len()]);
            let m = models.mu1()?.weighted_average(&grid, &rows, &tws);
            let mu0 = models.mu0()?;
            let (num, den) = treated.iter().fold((T::zero(), T::zero()), |(a, b), &i| {
                (a + u(i) * mu0.eval(data.x_row(i)), b + u(i))
            });
            let mut curve = EffectCurveEstimate::from_theta(Method::Or, grid, m, num / den);
            curve.diagnostics = diagnostics_of(fitted);
            Ok(curve)
        }
        Method::Ipw => {
            let models = fitted.model_set();
            let pi_d = models.pi_d()?;
            let f = marginal_density(pi_d, data, &grid, weights)?;
            let w1_raw: Vec<T> = treated
                .iter()
                .zip(&doses)
                .map(|(&i, &d)| {
                    f.try_eval(d).expect("treated dose is tabulated")
                        / pi_d.density(d, data.x_row(i))
                })
                .collect();
            let w1 = normalize_weights_with(&w1_raw, tw.as_deref())?;
            let ys: Vec<T> = treated
                .iter()
                .zip(&w1)
                .map(|(&i, &w)| w * data.trend(i))
                .collect();
            let (h, selected) = choose_bandwidth(config, &doses, &ys, tw.as_deref())?;
            let theta = local_linear_curve(&doses, &ys, tw.as_deref(), &grid, h, config.kernel)?;
            let mut ipw_models = models.clone();
            ipw_models.mu0 = Some(Arc::new(|_: &[T]| T::zero()));
            let theta0 = compute_theta0(data, &ipw_models, weights)?;
            let mut curve =
                EffectCurveEstimate::from_theta(Method::Ipw, grid, theta, theta0.theta00);
            curve.bandwidth = Some(h);
            curve.diagnostics = Diagnostics {
                bandwidth_selected: selected,
                ..diagnostics_of(fitted)
            };
            Ok(curve)
        }
        Method::Naive => {
            let ys: Vec<T> = treated.iter().map(|&i| data.trend(i)).collect();
            let (h, selected) = choose_bandwidth(config, &doses, &ys, tw.as_deref())?;
            let theta = local_linear_curve(&doses, &ys, tw.as_deref(), &grid, h, config.kernel)?;
            let (num, den) = data
                .control_indices()
                .iter()
                .fold((T::zero(), T::zero()), |(a, b), &i| {
                    (a + u(i) * data.trend(i), b + u(i))
                });
            let mut curve = EffectCurveEstimate::from_theta(Method::Naive, grid, theta, num / den);
            curve.bandwidth = Some(h);
            curve.diagnostics.bandwidth_selected = selected;
            Ok(curve)
        }
        Method::Twfe => twfe_curve(data, weights, grid),
    }
}

/// Pooled least squares of `Y_it` on `(1, X, t, A, A D, t A, t A D)` over
/// both periods; the curve is `tau_0 + tau_D delta`.
fn twfe_curve<T: Real>(
    data: &TwoPeriodDataset<T>,
    weights: Option<&[T]>,
    grid: Vec<T>,
) -> Result<EffectCurveEstimate<T>> {
    let (n, p) = (data.n(), data.p());
    let k = p + 6;
    let mut rows = Vec::with_capacity(2 * n * k);
    let mut y = Vec::with_capacity(2 * n);
    let mut w = Vec::with_capacity(2 * n);
    for (t, outcomes) in [(T::zero(), data.y0()), (T::one(), data.y1())] {
        for i in 0..n {
            let a = if data.treated(i) { T::one() } else { T::zero() };
            let d = data.dose(i).unwrap_or(T::zero());
            rows.push(T::one());
            rows.extend_from_slice(data.x_row(i));
            rows.extend_from_slice(&[t, a, a * d, t * a, t * a * d]);
            y.push(outcomes[i]);
            w.push(weights.map_or(T::one(), |u| u[i]));
        }
    }
    let design = Matrix::from_row_major(2 * n, k, rows)?;
    let fit = fit_wls(&design, &y, &w)?;
    let (tau0, tau_d) = (fit.coefficients[p + 4], fit.coefficients[p + 5]);
    let psi: Vec<T> = grid.iter().map(|&d| tau0 + tau_d * d).collect();
    let mut curve = EffectCurveEstimate::from_theta(Method::Twfe, grid, psi, T::zero());
    curve.diagnostics.ridge_applied = fit.ridge_applied;
    Ok(curve)
}
