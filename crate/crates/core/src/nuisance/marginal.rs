//! Marginalization of the dose-side nuisances over the treated covariates.

use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::nuisance::models::{ConditionalDensity, DoseTrend};
use crate::numeric::stats::sort_floats;
use crate::scalar::Real;

/// What to do with a dose outside the tabulated range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtrapolationPolicy {
    /// Use the value at the nearest endpoint and count the event.
    #[default]
    Clamp,
    /// Fail with an extrapolation error.
    Error,
}

/// A function of dose tabulated on a strictly increasing grid and linearly
/// interpolated between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCurve<T> {
    grid: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> MarginalCurve<T> {
    pub fn new(grid: Vec<T>, values: Vec<T>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::Dimension(
                "marginal grid and values differ in length".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "marginal grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn range(&self) -> (T, T) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn contains(&self, d: T) -> bool {
        let (lo, hi) = self.range();
        d >= lo && d <= hi
    }

    /// Interpolated value; `None` outside the tabulated range.
    pub fn try_eval(&self, d: T) -> Option<T> {
        if !self.contains(d) {
            return None;
        }
        let k = self.grid.partition_point(|&g| g <= d);
        if k == self.grid.len() {
            return Some(self.values[k - 1]);
        }
        if k == 0 {
            return Some(self.values[0]);
        }
        let (x0, x1) = (self.grid[k - 1], self.grid[k]);
        if d == x0 {
            return Some(self.values[k - 1]);
        }
        let t = (d - x0) / (x1 - x0);
        Some(self.values[k - 1] + (self.values[k] - self.values[k - 1]) * t)
    }

    /// Value at `d`, clamped to the nearest endpoint outside the range.
    /// The flag reports whether clamping happened.
    pub fn eval_clamped(&self, d: T) -> (T, bool) {
        match self.try_eval(d) {
            Some(v) => (v, false),
            None if d < self.grid[0] => (self.values[0], true),
            None => (self.values[self.values.len() - 1], true),
        }
    }
}

/// Sorted union of `dose_grid` and every treated dose, without duplicates.
pub fn tabulation_grid<T: Real>(data: &TwoPeriodDataset<T>, dose_grid: &[T]) -> Vec<T> {
    let mut g: Vec<T> = dose_grid
        .iter()
        .copied()
        .chain(data.treated_doses())
        .collect();
    sort_floats(&mut g);
    g.dedup();
    g
}

/// Averages `mu1` and `pi_d` over the treated units' covariates:
/// `m(d) = sum_i w_i mu1(d, X_i) / sum_i w_i` and likewise `f(d)`, tabulated
/// on the union of `dose_grid` and the observed treated doses.
pub fn marginalize<T: Real>(
    mu1: &dyn DoseTrend<T>,
    pi_d: &dyn ConditionalDensity<T>,
    data: &TwoPeriodDataset<T>,
    dose_grid: &[T],
    weights: Option<&[T]>,
) -> Result<(MarginalCurve<T>, MarginalCurve<T>)> {
    Ok((
        marginal_trend(mu1, data, dose_grid, weights)?,
        marginal_density(pi_d, data, dose_grid, weights)?,
    ))
}

fn treated_rows<'a, T: Real>(
    data: &'a TwoPeriodDataset<T>,
    weights: Option<&[T]>,
) -> Result<(Vec<&'a [T]>, Vec<T>)> {
    let treated = data.treated_indices();
    if treated.is_empty() {
        return Err(Error::InsufficientData(
            "no treated units to marginalize over".into(),
        ));
    }
    if weights.is_some_and(|w| w.len() != data.n()) {
        return Err(Error::Dimension(
            "unit weights do not match the dataset".into(),
        ));
    }
    let rows = treated.iter().map(|&i| data.x_row(i)).collect();
    let w = treated
        .iter()
        .map(|&i| weights.map_or(T::one(), |w| w[i]))
        .collect();
    Ok((rows, w))
}

pub fn marginal_trend<T: Real>(
    mu1: &dyn DoseTrend<T>,
    data: &TwoPeriodDataset<T>,
    dose_grid: &[T],
    weights: Option<&[T]>,
) -> Result<MarginalCurve<T>> {
    let (rows, w) = treated_rows(data, weights)?;
    let grid = tabulation_grid(data, dose_grid);
    let values = mu1.weighted_average(&grid, &rows, &w);
    MarginalCurve::new(grid, values)
}

pub fn marginal_density<T: Real>(
    pi_d: &dyn ConditionalDensity<T>,
    data: &TwoPeriodDataset<T>,
    dose_grid: &[T],
    weights: Option<&[T]>,
) -> Result<MarginalCurve<T>> {
    let (rows, w) = treated_rows(data, weights)?;
    let grid = tabulation_grid(data, dose_grid);
    let total: T = w.iter().copied().sum();
    let mut acc = vec![T::zero(); grid.len()];
    let mut buf = vec![T::zero(); grid.len()];
    for (x, &wi) in rows.iter().zip(&w) {
        pi_d.density_many(&grid, x, &mut buf);
        for (a, &b) in acc.iter_mut().zip(&buf) {
            *a += wi * b;
        }
    }
    let values = acc.iter().map(|&a| a / total).collect();
    MarginalCurve::new(grid, values)
}
