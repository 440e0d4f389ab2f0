//! Fitted nuisance functions and the routines that fit them.

use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::nuisance::features::FeatureSet;
use crate::nuisance::spec::{DensityForm, Learner, NuisanceKind, NuisanceSpec, TermSpec};
use crate::numeric::linalg::dot;
use crate::numeric::stats::weighted_std_dev;
use crate::numeric::{
    fit_logistic_weighted, fit_wls, gaussian_kde_weighted, LogisticFit, TabulatedDensity,
};
use crate::scalar::Real;

/// Lower bound applied to conditional and marginal dose densities.
pub const DENSITY_FLOOR: f64 = 1e-4;
/// Lower bound on predicted squared residuals of the dose model.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Minimum group size for the outcome and dose models.
pub const MIN_GROUP_SIZE: usize = 10;

pub trait Propensity<T: Real>: Send + Sync {
    /// `P(A = 1 | x)`.
    fn prob(&self, x: &[T]) -> T;
}

pub trait ConditionalDensity<T: Real>: Send + Sync {
    /// Density of dose `d` given covariates `x` among the treated.
    fn density(&self, d: T, x: &[T]) -> T;

    fn density_many(&self, doses: &[T], x: &[T], out: &mut [T]) {
        for (o, &d) in out.iter_mut().zip(doses) {
            *o = self.density(d, x);
        }
    }
}

pub trait DoseTrend<T: Real>: Send + Sync {
    /// Expected treated trend at dose `d` and covariates `x`.
    fn eval(&self, d: T, x: &[T]) -> T;

    fn eval_many(&self, doses: &[T], x: &[T], out: &mut [T]) {
        for (o, &d) in out.iter_mut().zip(doses) {
            *o = self.eval(d, x);
        }
    }

    /// `sum_i w_i f(d, x_i) / sum_i w_i` at every dose.
    fn weighted_average(&self, doses: &[T], rows: &[&[T]], weights: &[T]) -> Vec<T> {
        let total: T = weights.iter().copied().sum();
        let mut acc = vec![T::zero(); doses.len()];
        let mut buf = vec![T::zero(); doses.len()];
        for (x, &w) in rows.iter().zip(weights) {
            self.eval_many(doses, x, &mut buf);
            for (a, &b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        acc.iter().map(|&a| a / total).collect()
    }
}

pub trait CovariateTrend<T: Real>: Send + Sync {
    /// Expected control trend at covariates `x`.
    fn eval(&self, x: &[T]) -> T;
}

impl<T: Real, F> Propensity<T> for F
where
    F: Fn(&[T]) -> T + Send + Sync,
{
    fn prob(&self, x: &[T]) -> T {
        self(x)
    }
}

impl<T: Real, F> CovariateTrend<T> for F
where
    F: Fn(&[T]) -> T + Send + Sync,
{
    fn eval(&self, x: &[T]) -> T {
        self(x)
    }
}

impl<T: Real, F> DoseTrend<T> for F
where
    F: Fn(T, &[T]) -> T + Send + Sync,
{
    fn eval(&self, d: T, x: &[T]) -> T {
        self(d, x)
    }
}

/// Wraps a closure as a conditional density (closures already serve as
/// dose trends, so a newtype keeps the two roles apart).
pub struct DensityFn<F>(pub F);

impl<T: Real, F> ConditionalDensity<T> for DensityFn<F>
where
    F: Fn(T, &[T]) -> T + Send + Sync,
{
    fn density(&self, d: T, x: &[T]) -> T {
        (self.0)(d, x)
    }
}

/// Least-squares model on a feature set; serves as `mu1`, `mu0` and the
/// mean and scale models of `pi_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegression<T> {
    features: FeatureSet<T>,
    coefficients: Vec<T>,
    ridge_applied: bool,
}

impl<T: Real> FittedRegression<T> {
    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub fn ridge_applied(&self) -> bool {
        self.ridge_applied
    }

    pub fn features(&self) -> &FeatureSet<T> {
        &self.features
    }

    /// Same features with other coefficients.
    pub fn with_coefficients(&self, coefficients: Vec<T>) -> Self {
        assert_eq!(coefficients.len(), self.coefficients.len());
        Self {
            coefficients,
            ..self.clone()
        }
    }

    /// Prediction at dose `d` (ignored by dose-free models) and raw covariates.
    pub fn predict(&self, d: T, x: &[T]) -> T {
        let mut mapped = Vec::with_capacity(x.len());
        let mut row = vec![T::zero(); self.features.dim()];
        self.features.row_into(d, x, &mut mapped, &mut row);
        dot(&self.coefficients, &row)
    }

    /// Design row at `(d, x)`.
    pub fn design_row(&self, d: T, x: &[T]) -> Vec<T> {
        let mut mapped = Vec::with_capacity(x.len());
        let mut row = vec![T::zero(); self.features.dim()];
        self.features.row_into(d, x, &mut mapped, &mut row);
        row
    }

    fn covariate_factors(&self, x: &[T]) -> Vec<T> {
        let mapped = self.features.map().apply(x);
        let mut h = vec![T::zero(); self.features.dim()];
        self.features.covariate_factors_into(&mapped, &mut h);
        h
    }
}

impl<T: Real> DoseTrend<T> for FittedRegression<T> {
    fn eval(&self, d: T, x: &[T]) -> T {
        self.predict(d, x)
    }

    fn eval_many(&self, doses: &[T], x: &[T], out: &mut [T]) {
        let h = self.covariate_factors(x);
        let bh: Vec<T> = h
            .iter()
            .zip(&self.coefficients)
            .map(|(&a, &b)| a * b)
            .collect();
        let mut g = vec![T::zero(); bh.len()];
        for (o, &d) in out.iter_mut().zip(doses) {
            self.features.dose_factors_into(d, &mut g);
            *o = dot(&bh, &g);
        }
    }

    fn weighted_average(&self, doses: &[T], rows: &[&[T]], weights: &[T]) -> Vec<T> {
        let k = self.features.dim();
        let total: T = weights.iter().copied().sum();
        let mut hbar = vec![T::zero(); k];
        for (x, &w) in rows.iter().zip(weights) {
            for (a, b) in hbar.iter_mut().zip(self.covariate_factors(x)) {
                *a += w * b;
            }
        }
        let bh: Vec<T> = hbar
            .iter()
            .zip(&self.coefficients)
            .map(|(&a, &b)| a / total * b)
            .collect();
        let mut g = vec![T::zero(); k];
        doses
            .iter()
            .map(|&d| {
                self.features.dose_factors_into(d, &mut g);
                dot(&bh, &g)
            })
            .collect()
    }
}

impl<T: Real> CovariateTrend<T> for FittedRegression<T> {
    fn eval(&self, x: &[T]) -> T {
        self.predict(T::zero(), x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPropensity<T> {
    features: FeatureSet<T>,
    fit: LogisticFit<T>,
}

impl<T: Real> FittedPropensity<T> {
    pub fn fit(&self) -> &LogisticFit<T> {
        &self.fit
    }

    pub fn converged(&self) -> bool {
        self.fit.converged
    }

    pub fn with_coefficients(&self, coefficients: Vec<T>) -> Self {
        assert_eq!(coefficients.len(), self.fit.coefficients.len());
        Self {
            features: self.features.clone(),
            fit: LogisticFit {
                coefficients,
                ..self.fit.clone()
            },
        }
    }

    pub fn design_row(&self, x: &[T]) -> Vec<T> {
        let mut mapped = Vec::with_capacity(x.len());
        let mut row = vec![T::zero(); self.features.dim()];
        self.features.row_into(T::zero(), x, &mut mapped, &mut row);
        row
    }
}

impl<T: Real> Propensity<T> for FittedPropensity<T> {
    fn prob(&self, x: &[T]) -> T {
        self.fit.probability(&self.design_row(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DoseShape<T> {
    /// Heteroskedastic location-scale model with a kernel density of the
    /// standardized residuals.
    Kde {
        scale: FittedRegression<T>,
        residual_density: TabulatedDensity<T>,
    },
    /// Gaussian with constant standard deviation.
    Normal { sigma: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedDoseDensity<T> {
    mean: FittedRegression<T>,
    shape: DoseShape<T>,
}

impl<T: Real> FittedDoseDensity<T> {
    pub fn mean_model(&self) -> &FittedRegression<T> {
        &self.mean
    }

    pub fn shape(&self) -> &DoseShape<T> {
        &self.shape
    }

    /// Normal-form density with other mean coefficients and scale.
    pub fn with_normal_parameters(&self, coefficients: Vec<T>, sigma: T) -> Self {
        Self {
            mean: self.mean.with_coefficients(coefficients),
            shape: DoseShape::Normal { sigma },
        }
    }

    pub fn location(&self, x: &[T]) -> T {
        self.mean.predict(T::zero(), x)
    }

    pub fn scale(&self, x: &[T]) -> T {
        match &self.shape {
            DoseShape::Kde { scale, .. } => scale
                .predict(T::zero(), x)
                .max(T::lit(VARIANCE_FLOOR))
                .sqrt(),
            DoseShape::Normal { sigma } => *sigma,
        }
    }

    #[inline]
    fn standardized_density(&self, z: T) -> T {
        match &self.shape {
            DoseShape::Kde {
                residual_density, ..
            } => residual_density.evaluate(z),
            DoseShape::Normal { .. } => (T::lit(-0.5) * z * z).exp() / T::TAU().sqrt(),
        }
    }
}

impl<T: Real> ConditionalDensity<T> for FittedDoseDensity<T> {
    fn density(&self, d: T, x: &[T]) -> T {
        let (m, s) = (self.location(x), self.scale(x));
        (self.standardized_density((d - m) / s) / s).max(T::lit(DENSITY_FLOOR))
    }

    fn density_many(&self, doses: &[T], x: &[T], out: &mut [T]) {
        let (m, s) = (self.location(x), self.scale(x));
        let floor = T::lit(DENSITY_FLOOR);
        for (o, &d) in out.iter_mut().zip(doses) {
            *o = (self.standardized_density((d - m) / s) / s).max(floor);
        }
    }
}

fn unit_weights<T: Real>(data: &TwoPeriodDataset<T>, weights: Option<&[T]>) -> Result<Vec<T>> {
    match weights {
        Some(w) if w.len() != data.n() => Err(Error::Dimension(format!(
            "{} unit weights for {} units",
            w.len(),
            data.n()
        ))),
        Some(w) => Ok(w.to_vec()),
        None => Ok(vec![T::one(); data.n()]),
    }
}

fn check_spec(spec: &NuisanceSpec, expected: NuisanceKind, p: usize) -> Result<()> {
    if spec.which != expected {
        return Err(Error::InvalidSpec(format!(
            "{} specification passed where {} was expected",
            spec.which, expected
        )));
    }
    spec.validate(p)
}

/// Least squares of `response` on the features of `terms` over `units`.
fn regress<T: Real>(
    data: &TwoPeriodDataset<T>,
    spec: &NuisanceSpec,
    terms: &[TermSpec],
    units: &[usize],
    response: &[T],
    with_dose: bool,
    weights: &[T],
) -> Result<FittedRegression<T>> {
    let p = data.p();
    let q = spec.covariate_map.output_dim(p)?;
    let rows: Vec<&[T]> = units.iter().map(|&i| data.x_row(i)).collect();
    let mut mapped = Vec::with_capacity(units.len() * q);
    let mut buf = Vec::with_capacity(q);
    for x in &rows {
        spec.covariate_map.apply_into(x, &mut buf);
        mapped.extend_from_slice(&buf);
    }
    let doses: Option<Vec<T>> = with_dose.then(|| {
        units
            .iter()
            .map(|&i| data.dose(i).unwrap_or(T::zero()))
            .collect()
    });
    let w: Vec<T> = units.iter().map(|&i| weights[i]).collect();
    let features = FeatureSet::build(terms, spec.covariate_map, &mapped, q, doses.as_deref(), &w)?;
    let design = features.design(&rows, doses.as_deref());
    let fit = fit_wls(&design, response, &w)?;
    Ok(FittedRegression {
        features,
        coefficients: fit.coefficients,
        ridge_applied: fit.ridge_applied,
    })
}

/// Logistic propensity model fit on all units.
pub fn fit_pi_a<T: Real>(
    data: &TwoPeriodDataset<T>,
    spec: &NuisanceSpec,
    weights: Option<&[T]>,
) -> Result<FittedPropensity<T>> {
    check_spec(spec, NuisanceKind::PiA, data.p())?;
    let w = unit_weights(data, weights)?;
    let terms = spec.resolved_terms(data.p())?;
    let q = spec.covariate_map.output_dim(data.p())?;
    let mut mapped = Vec::with_capacity(data.n() * q);
    let mut buf = Vec::with_capacity(q);
    for i in 0..data.n() {
        spec.covariate_map.apply_into(data.x_row(i), &mut buf);
        mapped.extend_from_slice(&buf);
    }
    let features = FeatureSet::build(&terms, spec.covariate_map, &mapped, q, None, &w)?;
    let rows: Vec<&[T]> = (0..data.n()).map(|i| data.x_row(i)).collect();
    let design = features.design(&rows, None);
    let fit = fit_logistic_weighted(&design, data.treatment(), &w)?;
    Ok(FittedPropensity { features, fit })
}

/// Conditional dose density among the treated: a mean model, then either a
/// squared-residual scale model with a kernel density of the standardized
/// residuals, or a Gaussian with constant variance.
pub fn fit_pi_d<T: Real>(
    data: &TwoPeriodDataset<T>,
    spec: &NuisanceSpec,
    weights: Option<&[T]>,
) -> Result<FittedDoseDensity<T>> {
    check_spec(spec, NuisanceKind::PiD, data.p())?;
    let w = unit_weights(data, weights)?;
    let treated = data.treated_indices();
    if treated.len() < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "dose model needs at least {MIN_GROUP_SIZE} treated units, got {}",
            treated.len()
        )));
    }
    let doses: Vec<T> = treated
        .iter()
        .map(|&i| data.dose(i).expect("treated dose"))
        .collect();
    let tw: Vec<T> = treated.iter().map(|&i| w[i]).collect();
    let spread = weighted_std_dev(&doses, &tw);
    if !(spread > T::zero()) {
        return Err(Error::DegenerateExposure(
            "treated doses are constant".into(),
        ));
    }
    let mean = regress(
        data,
        spec,
        &spec.resolved_terms(data.p())?,
        &treated,
        &doses,
        false,
        &w,
    )?;
    let resid: Vec<T> = treated
        .iter()
        .zip(&doses)
        .map(|(&i, &d)| d - mean.predict(T::zero(), data.x_row(i)))
        .collect();
    if resid.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("dose model residuals".into()));
    }
    let shape = match spec.density {
        DensityForm::Normal => {
            let total: T = tw.iter().copied().sum();
            let ss: T = resid.iter().zip(&tw).map(|(&r, &v)| v * r * r).sum();
            DoseShape::Normal {
                sigma: (ss / total).sqrt().max(T::lit(VARIANCE_FLOOR).sqrt()),
            }
        }
        DensityForm::Kde => {
            let sq: Vec<T> = resid.iter().map(|&r| r * r).collect();
            let scale = regress(
                data,
                spec,
                &spec.resolved_variance_terms(data.p())?,
                &treated,
                &sq,
                false,
                &w,
            )?;
            let floor = T::lit(VARIANCE_FLOOR);
            let z: Vec<T> = treated
                .iter()
                .zip(&resid)
                .map(|(&i, &r)| r / scale.predict(T::zero(), data.x_row(i)).max(floor).sqrt())
                .collect();
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("standardized dose residuals".into()));
            }
            let kde = gaussian_kde_weighted(&z, &tw, None)?;
            DoseShape::Kde {
                scale,
                residual_density: kde.tabulate(),
            }
        }
    };
    Ok(FittedDoseDensity { mean, shape })
}

/// Treated outcome-trend model on `(d, x)`, fit on treated units only.
pub fn fit_mu1<T: Real>(
    data: &TwoPeriodDataset<T>,
    spec: &NuisanceSpec,
    weights: Option<&[T]>,
) -> Result<FittedRegression<T>> {
    check_spec(spec, NuisanceKind::Mu1, data.p())?;
    let w = unit_weights(data, weights)?;
    let treated = data.treated_indices();
    if treated.len() < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "mu1 needs at least {MIN_GROUP_SIZE} treated units, got {}",
            treated.len()
        )));
    }
    let trends: Vec<T> = treated.iter().map(|&i| data.trend(i)).collect();
    regress(
        data,
        spec,
        &spec.resolved_terms(data.p())?,
        &treated,
        &trends,
        true,
        &w,
    )
}

/// Control outcome-trend model on `x`, fit on control units only.
pub fn fit_mu0<T: Real>(
    data: &TwoPeriodDataset<T>,
    spec: &NuisanceSpec,
    weights: Option<&[T]>,
) -> Result<FittedRegression<T>> {
    check_spec(spec, NuisanceKind::Mu0, data.p())?;
    let w = unit_weights(data, weights)?;
    let controls = data.control_indices();
    if controls.len() < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "mu0 needs at least {MIN_GROUP_SIZE} control units, got {}",
            controls.len()
        )));
    }
    let trends: Vec<T> = controls.iter().map(|&i| data.trend(i)).collect();
    regress(
        data,
        spec,
        &spec.resolved_terms(data.p())?,
        &controls,
        &trends,
        false,
        &w,
    )
}

/// Learner of a spec is parametric (least squares or logistic).
pub fn is_parametric(spec: &NuisanceSpec) -> bool {
    spec.learner != Learner::FlexibleAdditive
}
