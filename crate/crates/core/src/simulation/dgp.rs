//! Data-generating processes for the simulation studies.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{PanelDataset, TwoPeriodDataset, UnitRecord};
use crate::error::{Error, Result};
use crate::numeric::logistic::expit;
use crate::rng::{role, stream};
use crate::scalar::Real;

pub const COVARIATE_NAMES: [&str; 4] = ["x1", "x2", "x3", "x4"];

/// Treated-minus-control trend structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Effect {
    /// The heterogeneous, dose-dependent treated trend of the main study.
    Benchmark,
    /// Both groups share the constant trend `-3`, so every method targets zero.
    Null,
    /// Treated trend equals the control trend plus a constant.
    Shift(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dgp {
    pub effect: Effect,
}

/// Draws of one unit before outcomes.
#[derive(Debug, Clone, Copy)]
struct Design {
    x: [f64; 4],
    a: bool,
    d: f64,
}

pub const PROPENSITY_INTERCEPT: f64 = -0.1;
pub const PROPENSITY_SLOPES: [f64; 4] = [0.05, 0.05, -0.05, 0.15];
pub const DOSE_INTERCEPT: f64 = 3.0;
pub const DOSE_SLOPES: [f64; 4] = [0.2, 0.25, -0.3, 0.5];
pub const DOSE_SD: f64 = 2.0;
pub const PRE_SD: f64 = 0.3;
pub const POST_SD: f64 = 0.7;

fn linear(intercept: f64, slopes: &[f64; 4], x: &[f64; 4]) -> f64 {
    intercept + slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

pub fn propensity(x: &[f64; 4]) -> f64 {
    expit(linear(PROPENSITY_INTERCEPT, &PROPENSITY_SLOPES, x))
}

pub fn dose_mean(x: &[f64; 4]) -> f64 {
    linear(DOSE_INTERCEPT, &DOSE_SLOPES, x)
}

/// Pre-period outcome mean.
pub fn baseline(x: &[f64; 4], a: bool) -> f64 {
    10.0 + 0.4 * x[0] - x[1] + 0.4 * x[2] + 0.3 * x[3] + if a { 2.0 } else { 0.0 }
}

/// Control trend of the main study.
pub fn benchmark_lambda0(x: &[f64; 4]) -> f64 {
    -3.0 - x[0] + 0.7 * x[1] + 0.6 * x[2] - 0.6 * x[3]
}

/// Treated trend of the main study at dose `d`.
pub fn benchmark_lambda1(x: &[f64; 4], d: f64) -> f64 {
    1.0 + 0.6 * x[0] + 0.6 * x[1] + 0.9 * x[2] - 0.3 * x[3]
        + 2.0
        + d * (0.04 - 0.1 * x[0] + 0.1 * x[2] - 0.003 * d * d)
}

impl Dgp {
    pub fn benchmark() -> Self {
        Self {
            effect: Effect::Benchmark,
        }
    }

    pub fn null() -> Self {
        Self {
            effect: Effect::Null,
        }
    }

    pub fn shift(c: f64) -> Self {
        Self {
            effect: Effect::Shift(c),
        }
    }

    pub fn lambda0(&self, x: &[f64; 4]) -> f64 {
        match self.effect {
            Effect::Null => -3.0,
            Effect::Benchmark | Effect::Shift(_) => benchmark_lambda0(x),
        }
    }

    pub fn lambda1(&self, x: &[f64; 4], d: f64) -> f64 {
        match self.effect {
            Effect::Benchmark => benchmark_lambda1(x, d),
            Effect::Null => -3.0,
            Effect::Shift(c) => benchmark_lambda0(x) + c,
        }
    }

    /// Unit-level effect `lambda1(x, d) - lambda0(x)` of a treated unit.
    pub fn effect(&self, x: &[f64; 4], d: f64) -> f64 {
        self.lambda1(x, d) - self.lambda0(x)
    }

    /// Dataset of `n` units for `(seed, replicate)`. Each variable comes from
    /// its own stream, so datasets are reproducible in isolation.
    pub fn generate<T: Real>(
        &self,
        n: usize,
        seed: u64,
        replicate: u64,
    ) -> Result<TwoPeriodDataset<T>> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "sample size must be positive".into(),
            ));
        }
        let designs = draw_designs(n, seed, replicate, 0.0);
        let mut pre = stream(seed, replicate, role::OUTCOME_PRE);
        let mut post = stream(seed, replicate, role::OUTCOME_POST);
        let mut x = Vec::with_capacity(4 * n);
        let (mut a, mut d, mut y0, mut y1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for u in &designs {
            let e0: f64 = pre.sample(StandardNormal);
            let e1: f64 = post.sample(StandardNormal);
            let base = baseline(&u.x, u.a) + PRE_SD * e0;
            let trend = if u.a {
                self.lambda1(&u.x, u.d)
            } else {
                self.lambda0(&u.x)
            };
            x.extend(u.x.iter().map(|&v| T::lit(v)));
            a.push(u.a);
            d.push(u.a.then(|| T::lit(u.d)));
            y0.push(T::lit(base));
            y1.push(T::lit(base + trend + POST_SD * e1));
        }
        TwoPeriodDataset::new(
            (1..=n).map(|i| i.to_string()).collect(),
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            x,
            a,
            d,
            y0,
            y1,
            (0, 1),
        )
    }
}

/// Covariates, treatment and dose; `confounding` adds `gamma * x1` to both
/// the propensity logit and the dose mean.
fn draw_designs(n: usize, seed: u64, replicate: u64, confounding: f64) -> Vec<Design> {
    let mut cov = stream(seed, replicate, role::COVARIATES);
    let mut treat = stream(seed, replicate, role::TREATMENT);
    let mut dose = stream(seed, replicate, role::DOSE);
    (0..n)
        .map(|_| {
            let x: [f64; 4] = std::array::from_fn(|_| cov.sample(StandardNormal));
            let u: f64 = treat.random();
            let a = u < expit(
                linear(PROPENSITY_INTERCEPT, &PROPENSITY_SLOPES, &x) + confounding * x[0],
            );
            let z: f64 = dose.sample(StandardNormal);
            let d = dose_mean(&x) + confounding * x[0] + DOSE_SD * z;
            Design { x, a, d }
        })
        .collect()
}

/// Panel with `m` pre and `m` post periods labelled `1..=2m`; pair
/// `(k, m + k)` carries the constant treated effect `effects[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDgp {
    pub m: usize,
    pub effects: Vec<f64>,
    /// Every period adds `pre_trend * x1` to all units' outcomes.
    pub pre_trend: f64,
    /// Extra `x1` coefficient in the propensity logit and the dose mean.
    pub confounding: f64,
    pub noise_sd: f64,
}

impl PanelDgp {
    pub fn new(effects: Vec<f64>) -> Self {
        Self {
            m: effects.len(),
            effects,
            pre_trend: 0.0,
            confounding: 0.0,
            noise_sd: 0.5,
        }
    }

    pub fn with_pre_trend(mut self, pre_trend: f64, confounding: f64) -> Self {
        self.pre_trend = pre_trend;
        self.confounding = confounding;
        self
    }

    pub fn periods(&self) -> Vec<i64> {
        (1..=2 * self.m as i64).collect()
    }

    /// `(pre, post)` pairs matched on the position within each half.
    pub fn pairs(&self) -> Vec<(i64, i64)> {
        (1..=self.m as i64)
            .map(|k| (k, self.m as i64 + k))
            .collect()
    }

    pub fn generate<T: Real>(
        &self,
        n: usize,
        seed: u64,
        replicate: u64,
    ) -> Result<PanelDataset<T>> {
        if self.m == 0 || self.effects.len() != self.m {
            return Err(Error::InvalidArgument(
                "panel needs one effect per post period".into(),
            ));
        }
        let designs = draw_designs(n, seed, replicate, self.confounding);
        let mut noise = stream(seed, replicate, role::PANEL);
        let periods = self.periods();
        let eps: Vec<Vec<f64>> = periods
            .iter()
            .map(|_| (0..n).map(|_| noise.sample(StandardNormal)).collect())
            .collect();
        let units = designs
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let mut y = BTreeMap::new();
                for (k, &t) in periods.iter().enumerate() {
                    let mut v = baseline(&u.x, u.a) + (t - 1) as f64 * self.pre_trend * u.x[0];
                    if k >= self.m {
                        v += benchmark_lambda0(&u.x);
                        if u.a {
                            v += self.effects[k - self.m];
                        }
                    }
                    y.insert(t, T::lit(v + self.noise_sd * eps[k][i]));
                }
                UnitRecord {
                    id: (i + 1).to_string(),
                    x: u.x.iter().map(|&v| T::lit(v)).collect(),
                    a: u.a,
                    d: u.a.then(|| T::lit(u.d)),
                    y,
                }
            })
            .collect();
        PanelDataset::new(
            units,
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            periods,
        )
    }
}
