//! Ground-truth effect curve by Monte-Carlo integration over a super-population.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::logistic::expit;
use crate::numeric::stats::{linspace, quantile_sorted, sort_floats};
use crate::rng::{role, stream};
use crate::simulation::dgp::{dose_mean, Dgp, DOSE_SD, PROPENSITY_INTERCEPT, PROPENSITY_SLOPES};

pub const DEFAULT_SUPER_N: usize = 1_000_000;
pub const MIN_SUPER_N: usize = 10_000;
pub const GRID_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub grid: Vec<f64>,
    pub psi: Vec<f64>,
    /// Treated-dose histogram on bins centred at the grid points, summing to one.
    pub density_weights: Vec<f64>,
}

/// Treated units of the super-population: covariates and doses.
pub fn super_population(seed: u64, super_n: usize) -> (Vec<[f64; 4]>, Vec<f64>) {
    let mut rng = stream(seed, 0, role::SUPER_POPULATION);
    let mut xs = Vec::with_capacity(super_n / 2 + 1);
    let mut ds = Vec::with_capacity(super_n / 2 + 1);
    for _ in 0..super_n {
        let x: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let u: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let eta = PROPENSITY_INTERCEPT
            + PROPENSITY_SLOPES
                .iter()
                .zip(&x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        if u < expit(eta) {
            xs.push(x);
            ds.push(dose_mean(&x) + DOSE_SD * z);
        }
    }
    (xs, ds)
}

/// True curve on the default grid between the 10th and 90th percentiles of
/// the super-population treated doses.
pub fn ground_truth_curve(dgp: &Dgp, seed: u64, super_n: usize) -> Result<GroundTruth> {
    ground_truth_with_points(dgp, seed, super_n, GRID_POINTS)
}

pub fn ground_truth_with_points(
    dgp: &Dgp,
    seed: u64,
    super_n: usize,
    points: usize,
) -> Result<GroundTruth> {
    if super_n < MIN_SUPER_N {
        return Err(Error::InvalidArgument(format!(
            "super-population needs at least {MIN_SUPER_N} units, got {super_n}"
        )));
    }
    if points < 2 {
        return Err(Error::InvalidArgument(
            "the truth grid needs at least 2 points".into(),
        ));
    }
    let (xs, ds) = super_population(seed, super_n);
    let mut sorted = ds.clone();
    sort_floats(&mut sorted);
    let grid = linspace(
        quantile_sorted(&sorted, 0.1),
        quantile_sorted(&sorted, 0.9),
        points,
    );
    let count = xs.len() as f64;
    let psi = grid
        .iter()
        .map(|&d| xs.iter().map(|x| dgp.effect(x, d)).sum::<f64>() / count)
        .collect();
    let step = grid[1] - grid[0];
    let lo = grid[0] - step / 2.0;
    let mut counts = vec![0usize; points];
    for &d in &ds {
        let k = ((d - lo) / step).floor();
        if k >= 0.0 && (k as usize) < points {
            counts[k as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let density_weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(GroundTruth {
        grid,
        psi,
        density_weights,
    })
}
