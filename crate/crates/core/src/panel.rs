//! Repeated observation times: per-pair curves, their average over pairs,
//! and placebo curves between pre-intervention periods.

use rayon::prelude::*;

use crate::curves::{
    estimate_curve_weighted, fit_mr, EffectCurveEstimate, EstimatorConfig, Method,
};
use crate::data::{pair_periods, PanelDataset, TwoPeriodDataset};
use crate::error::{Error, Result};
use crate::inference::{
    equation_system, percentile_bands, run_replicates, stacked_sandwich, BootstrapConfig,
    BootstrapResult, SandwichBands, SandwichMode,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PanelInference {
    /// Stacked sandwich over the pairs (MR only).
    pub sandwich: Option<SandwichMode>,
    /// Unit bootstrap with one weight draw per replicate shared by all pairs.
    pub bootstrap: Option<BootstrapConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedEstimate<T> {
    pub pairs: Vec<(i64, i64)>,
    /// One curve per pair, all on the same grid.
    pub per_m: Vec<EffectCurveEstimate<T>>,
    /// Pointwise mean of the per-pair curves.
    pub averaged: EffectCurveEstimate<T>,
    pub sandwich: Option<SandwichBands<T>>,
    /// Bootstrap bands of the averaged curve.
    pub bootstrap: Option<BootstrapResult<T>>,
}

impl<T> RepeatedEstimate<T> {
    pub fn m(&self) -> usize {
        self.per_m.len()
    }
}

/// Pointwise mean of curves sharing a grid.
pub fn average_curves<T: Real>(
    curves: &[EffectCurveEstimate<T>],
) -> Result<EffectCurveEstimate<T>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to average".into()))?;
    if curves.iter().any(|c| c.grid != first.grid) {
        return Err(Error::Dimension(
            "curves to average have different grids".into(),
        ));
    }
    if curves.len() == 1 {
        return Ok(first.clone());
    }
    let m = T::from_count(curves.len());
    let mean = |f: &dyn Fn(&EffectCurveEstimate<T>) -> &[T]| -> Vec<T> {
        (0..first.grid.len())
            .map(|k| curves.iter().map(|c| f(c)[k]).sum::<T>() / m)
            .collect()
    };
    let mut out = first.clone();
    out.psi = mean(&|c| &c.psi);
    out.theta_curve = mean(&|c| &c.theta_curve);
    out.theta0 = curves.iter().map(|c| c.theta0).sum::<T>() / m;
    out.bandwidth = None;
    out.ci_lower = None;
    out.ci_upper = None;
    out.diagnostics.clamped = curves.iter().map(|c| c.diagnostics.clamped).sum();
    out.diagnostics.ridge_applied = curves.iter().any(|c| c.diagnostics.ridge_applied);
    out.diagnostics.variance_floored.clear();
    Ok(out)
}

fn pair_all<T: Real>(
    data: &PanelDataset<T>,
    pairs: &[(i64, i64)],
) -> Result<Vec<TwoPeriodDataset<T>>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one (pre, post) pair is required".into(),
        ));
    }
    pairs
        .iter()
        .map(|&(pre, post)| pair_periods(data, pre, post))
        .collect()
}

/// Estimates one curve per `(pre, post)` pair with nuisances refit per pair,
/// on a grid shared by all pairs, and averages them.
pub fn estimate_repeated<T: Real>(
    data: &PanelDataset<T>,
    pairs: &[(i64, i64)],
    config: &EstimatorConfig<T>,
    inference: &PanelInference,
) -> Result<RepeatedEstimate<T>> {
    let datasets = pair_all(data, pairs)?;
    let grid = config.grid.resolve(&datasets[0])?;
    let want_sandwich = inference.sandwich.is_some();
    if want_sandwich && config.method != Method::Mr {
        return Err(Error::InvalidArgument(format!(
            "sandwich bands need the MR method, got {}",
            config.method
        )));
    }
    let fits: Vec<(EffectCurveEstimate<T>, Option<crate::curves::MrFit<T>>)> = datasets
        .par_iter()
        .map(|d| {
            if want_sandwich {
                let fit = fit_mr(d, config, None, Some(&grid))?;
                Ok((fit.curve.clone(), Some(fit)))
            } else {
                Ok((estimate_curve_weighted(d, config, None, Some(&grid))?, None))
            }
        })
        .collect::<Result<_>>()?;
    let mut per_m: Vec<EffectCurveEstimate<T>> = fits.iter().map(|(c, _)| c.clone()).collect();
    let mut averaged = average_curves(&per_m)?;

    let sandwich = match inference.sandwich {
        Some(mode) => {
            let systems = datasets
                .iter()
                .zip(&fits)
                .map(|(d, (_, fit))| {
                    equation_system(d, fit.as_ref().expect("MR fit kept"), config.kernel, mode)
                })
                .collect::<Result<Vec<_>>>()?;
            for (curve, system) in per_m.iter_mut().zip(&systems) {
                let bands = stacked_sandwich(std::slice::from_ref(system))?;
                curve.diagnostics.variance_floored = bands.floored.clone();
                *curve = curve.clone().with_bands(bands.lower, bands.upper);
            }
            let bands = stacked_sandwich(&systems)?;
            averaged.diagnostics.variance_floored = bands.floored.clone();
            averaged = averaged.with_bands(bands.lower.clone(), bands.upper.clone());
            Some(bands)
        }
        None => None,
    };

    let bootstrap = match &inference.bootstrap {
        Some(boot) => {
            let result = repeated_bootstrap(&datasets, config, &grid, boot)?;
            if sandwich.is_none() {
                averaged = averaged.with_bands(result.lower.clone(), result.upper.clone());
            }
            Some(result)
        }
        None => None,
    };

    Ok(RepeatedEstimate {
        pairs: pairs.to_vec(),
        per_m,
        averaged,
        sandwich,
        bootstrap,
    })
}

/// Bootstrap of the averaged curve: each replicate draws one weight per unit
/// and reuses it for every pair.
pub fn repeated_bootstrap<T: Real>(
    datasets: &[TwoPeriodDataset<T>],
    config: &EstimatorConfig<T>,
    grid: &[T],
    boot: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    if boot.replicates < 2 {
        return Err(Error::InvalidArgument(format!(
            "the bootstrap needs at least 2 replicates, got {}",
            boot.replicates
        )));
    }
    let draws = run_replicates(datasets[0].treatment(), boot, |_, w: &[T]| {
        let curves: Option<Vec<EffectCurveEstimate<T>>> = datasets
            .iter()
            .map(|d| estimate_curve_weighted(d, config, Some(w), Some(grid)).ok())
            .collect();
        average_curves(&curves?).ok().map(|c| c.psi)
    });
    percentile_bands(grid.to_vec(), draws)
}

/// Placebo curves between `baseline` and each period in `placebo_posts`,
/// all of which must precede `intervention`. The true curve is zero.
pub fn placebo_curves<T: Real>(
    data: &PanelDataset<T>,
    baseline: i64,
    placebo_posts: &[i64],
    intervention: i64,
    config: &EstimatorConfig<T>,
) -> Result<Vec<EffectCurveEstimate<T>>> {
    if placebo_posts.is_empty() {
        return Err(Error::InvalidArgument("no placebo periods given".into()));
    }
    if placebo_posts.contains(&baseline) {
        return Err(Error::InvalidArgument(format!(
            "placebo baseline {baseline} is also a placebo post period"
        )));
    }
    if let Some(t) = std::iter::once(&baseline)
        .chain(placebo_posts)
        .find(|&&t| t >= intervention)
    {
        return Err(Error::InvalidArgument(format!(
            "placebo period {t} is not before the intervention at {intervention}"
        )));
    }
    let pairs: Vec<(i64, i64)> = placebo_posts.iter().map(|&p| (baseline, p)).collect();
    let datasets = pair_all(data, &pairs)?;
    let grid = config.grid.resolve(&datasets[0])?;
    datasets
        .par_iter()
        .map(|d| estimate_curve_weighted(d, config, None, Some(&grid)))
        .collect()
}

/// Divides every outcome of a unit by that unit's mean outcome over
/// `pre_periods`.
pub fn scale_by_pre_mean<T: Real>(
    data: &PanelDataset<T>,
    pre_periods: &[i64],
) -> Result<PanelDataset<T>> {
    if pre_periods.is_empty() {
        return Err(Error::InvalidArgument("no periods to scale by".into()));
    }
    if let Some(&t) = pre_periods
        .iter()
        .find(|t| !data.period_labels().contains(t))
    {
        return Err(Error::UnknownPeriod(t));
    }
    let count = T::from_count(pre_periods.len());
    for u in data.units() {
        let mean = pre_periods.iter().map(|t| u.y[t]).sum::<T>() / count;
        if mean == T::zero() || !mean.is_finite() {
            return Err(Error::Validation(format!(
                "unit '{}' has a zero or non-finite pre-period mean",
                u.id
            )));
        }
    }
    Ok(data.map_outcomes(|u, _, y| {
        let mean = pre_periods.iter().map(|t| u.y[t]).sum::<T>() / count;
        y / mean
    }))
}
