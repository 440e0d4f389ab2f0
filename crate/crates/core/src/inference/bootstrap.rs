//! Multiplier bootstrap with exponential unit weights.

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::curves::{estimate_curve_weighted, EffectCurveEstimate, EstimatorConfig};
use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::numeric::stats::quantile_sorted;
use crate::rng::{role, stream};
use crate::scalar::Real;

/// Share of failed replicates above which the result is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightStream {
    /// Standard exponential draws.
    #[default]
    Exponential,
    /// Every weight equal to one.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub stream: WeightStream,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            stream: WeightStream::Exponential,
        }
    }
}

/// Weights of replicate `replicate`, drawn in unit order and rescaled so
/// they sum to the group size within the treated and the control group.
pub fn bootstrap_weights<T: Real>(
    treatment: &[bool],
    seed: u64,
    replicate: u64,
    kind: WeightStream,
) -> Vec<T> {
    let mut w: Vec<T> = match kind {
        WeightStream::Unit => return vec![T::one(); treatment.len()],
        WeightStream::Exponential => {
            let mut rng = stream(seed, replicate, role::BOOTSTRAP);
            (0..treatment.len())
                .map(|_| T::lit(Exp1.sample(&mut rng)))
                .collect()
        }
    };
    for group in [true, false] {
        let (sum, count) = treatment
            .iter()
            .zip(&w)
            .filter(|(&a, _)| a == group)
            .fold((T::zero(), 0usize), |(s, c), (_, &v)| (s + v, c + 1));
        if count == 0 {
            continue;
        }
        let scale = T::from_count(count) / sum;
        for (v, &a) in w.iter_mut().zip(treatment) {
            if a == group {
                *v *= scale;
            }
        }
    }
    w
}

/// Runs `f` on every replicate's weights in parallel; results come back in
/// replicate order.
pub fn run_replicates<T, R, F>(treatment: &[bool], config: &BootstrapConfig, f: F) -> Vec<R>
where
    T: Real,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let w = bootstrap_weights::<T>(treatment, config.seed, b as u64, config.stream);
            f(b, &w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult<T> {
    pub grid: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Successful replicate curves, in replicate order.
    pub replicates: Vec<Vec<T>>,
    pub failures: usize,
    /// More than a tenth of the replicates failed.
    pub flagged: bool,
}

/// Percentile intervals from replicate curves; `None` entries are failures.
pub fn percentile_bands<T: Real>(
    grid: Vec<T>,
    draws: Vec<Option<Vec<T>>>,
) -> Result<BootstrapResult<T>> {
    let total = draws.len();
    let replicates: Vec<Vec<T>> = draws.into_iter().flatten().collect();
    let failures = total - replicates.len();
    if replicates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} of {total} bootstrap replicates succeeded",
            replicates.len()
        )));
    }
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut column = Vec::with_capacity(replicates.len());
    for g in 0..grid.len() {
        column.clear();
        column.extend(replicates.iter().map(|r| r[g]));
        crate::numeric::stats::sort_floats(&mut column);
        lower.push(quantile_sorted(&column, T::lit(0.025)));
        upper.push(quantile_sorted(&column, T::lit(0.975)));
    }
    Ok(BootstrapResult {
        grid,
        lower,
        upper,
        replicates,
        failures,
        flagged: failures as f64 > FAILURE_FLAG_RATE * total as f64,
    })
}

/// Re-estimates the curve under each replicate's weights on the point
/// estimate's grid, re-selecting the bandwidth unless it is fixed.
pub fn weighted_bootstrap<T: Real>(
    data: &TwoPeriodDataset<T>,
    config: &EstimatorConfig<T>,
    estimate: &EffectCurveEstimate<T>,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    if boot.replicates < 2 {
        return Err(Error::InvalidArgument(format!(
            "the bootstrap needs at least 2 replicates, got {}",
            boot.replicates
        )));
    }
    let grid = estimate.grid.clone();
    let draws = run_replicates(data.treatment(), boot, |_, w: &[T]| {
        estimate_curve_weighted(data, config, Some(w), Some(&grid))
            .ok()
            .map(|c| c.psi)
    });
    percentile_bands(grid, draws)
}
