//! The four nuisance functions and their marginalized summaries.

pub mod features;
pub mod marginal;
pub mod models;
pub mod spec;

use std::fmt;
use std::sync::Arc;

use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub use marginal::{
    marginal_density, marginal_trend, marginalize, tabulation_grid, ExtrapolationPolicy,
    MarginalCurve,
};
pub use models::{
    fit_mu0, fit_mu1, fit_pi_a, fit_pi_d, ConditionalDensity, CovariateTrend, DensityFn, DoseShape,
    DoseTrend, FittedDoseDensity, FittedPropensity, FittedRegression, Propensity, DENSITY_FLOOR,
    MIN_GROUP_SIZE, VARIANCE_FLOOR,
};
pub use spec::{
    default_terms, kang_schafer_map, CovariateFactor, CovariateMap, DensityForm, DoseFactor,
    Learner, NuisanceKind, NuisanceSpec, NuisanceSpecs, TermSpec,
};

/// Nuisance functions as used by the pseudo-outcome construction. Any of
/// them may be a fitted model or an arbitrary function.
#[derive(Clone, Default)]
pub struct NuisanceModelSet<T> {
    pub pi_a: Option<Arc<dyn Propensity<T>>>,
    pub pi_d: Option<Arc<dyn ConditionalDensity<T>>>,
    pub mu1: Option<Arc<dyn DoseTrend<T>>>,
    pub mu0: Option<Arc<dyn CovariateTrend<T>>>,
    /// `m(d | A = 1)`.
    pub m_marginal: Option<MarginalCurve<T>>,
    /// `f(d | A = 1)`.
    pub f_marginal: Option<MarginalCurve<T>>,
}

impl<T: Real> NuisanceModelSet<T> {
    pub fn pi_a(&self) -> Result<&dyn Propensity<T>> {
        self.pi_a
            .as_deref()
            .ok_or_else(|| Error::MissingSpec("pi_a".into()))
    }

    pub fn pi_d(&self) -> Result<&dyn ConditionalDensity<T>> {
        self.pi_d
            .as_deref()
            .ok_or_else(|| Error::MissingSpec("pi_d".into()))
    }

    pub fn mu1(&self) -> Result<&dyn DoseTrend<T>> {
        self.mu1
            .as_deref()
            .ok_or_else(|| Error::MissingSpec("mu1".into()))
    }

    pub fn mu0(&self) -> Result<&dyn CovariateTrend<T>> {
        self.mu0
            .as_deref()
            .ok_or_else(|| Error::MissingSpec("mu0".into()))
    }

    pub fn m_marginal(&self) -> Result<&MarginalCurve<T>> {
        self.m_marginal
            .as_ref()
            .ok_or_else(|| Error::MissingSpec("m (marginalized mu1)".into()))
    }

    pub fn f_marginal(&self) -> Result<&MarginalCurve<T>> {
        self.f_marginal
            .as_ref()
            .ok_or_else(|| Error::MissingSpec("f (marginal dose density)".into()))
    }

    /// Fills in `m` and `f` from `mu1` and `pi_d` where those are present.
    pub fn marginalize(
        mut self,
        data: &TwoPeriodDataset<T>,
        dose_grid: &[T],
        weights: Option<&[T]>,
    ) -> Result<Self> {
        if let Some(mu1) = &self.mu1 {
            self.m_marginal = Some(marginal_trend(mu1.as_ref(), data, dose_grid, weights)?);
        }
        if let Some(pi_d) = &self.pi_d {
            self.f_marginal = Some(marginal_density(pi_d.as_ref(), data, dose_grid, weights)?);
        }
        Ok(self)
    }
}

impl<T> fmt::Debug for NuisanceModelSet<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceModelSet")
            .field("pi_a", &self.pi_a.is_some())
            .field("pi_d", &self.pi_d.is_some())
            .field("mu1", &self.mu1.is_some())
            .field("mu0", &self.mu0.is_some())
            .field("m_marginal", &self.m_marginal)
            .field("f_marginal", &self.f_marginal)
            .finish()
    }
}

/// Concrete fitted models, kept so their parameters stay accessible.
#[derive(Debug, Clone, Default)]
pub struct FittedNuisances<T> {
    pub pi_a: Option<Arc<FittedPropensity<T>>>,
    pub pi_d: Option<Arc<FittedDoseDensity<T>>>,
    pub mu1: Option<Arc<FittedRegression<T>>>,
    pub mu0: Option<Arc<FittedRegression<T>>>,
}

impl<T: Real> FittedNuisances<T> {
    /// Fits every nuisance that has a specification.
    pub fn fit(
        data: &TwoPeriodDataset<T>,
        specs: &NuisanceSpecs,
        weights: Option<&[T]>,
    ) -> Result<Self> {
        Ok(Self {
            pi_a: specs
                .pi_a
                .as_ref()
                .map(|s| fit_pi_a(data, s, weights))
                .transpose()?
                .map(Arc::new),
            pi_d: specs
                .pi_d
                .as_ref()
                .map(|s| fit_pi_d(data, s, weights))
                .transpose()?
                .map(Arc::new),
            mu1: specs
                .mu1
                .as_ref()
                .map(|s| fit_mu1(data, s, weights))
                .transpose()?
                .map(Arc::new),
            mu0: specs
                .mu0
                .as_ref()
                .map(|s| fit_mu0(data, s, weights))
                .transpose()?
                .map(Arc::new),
        })
    }

    /// Trait-object view without marginals.
    pub fn model_set(&self) -> NuisanceModelSet<T> {
        NuisanceModelSet {
            pi_a: self.pi_a.clone().map(|m| m as Arc<dyn Propensity<T>>),
            pi_d: self
                .pi_d
                .clone()
                .map(|m| m as Arc<dyn ConditionalDensity<T>>),
            mu1: self.mu1.clone().map(|m| m as Arc<dyn DoseTrend<T>>),
            mu0: self.mu0.clone().map(|m| m as Arc<dyn CovariateTrend<T>>),
            m_marginal: None,
            f_marginal: None,
        }
    }

    /// Model set with `m` and `f` tabulated on `dose_grid` and the treated doses.
    pub fn marginalized(
        &self,
        data: &TwoPeriodDataset<T>,
        dose_grid: &[T],
        weights: Option<&[T]>,
    ) -> Result<NuisanceModelSet<T>> {
        self.model_set().marginalize(data, dose_grid, weights)
    }
}
