//! Pseudo-outcomes and control-side components of the influence function.

use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::nuisance::{ExtrapolationPolicy, MarginalCurve, NuisanceModelSet};
use crate::numeric::stats::trapezoid;
use crate::scalar::Real;

/// Rescales positive weights to mean one.
pub fn normalize_weights<T: Real>(weights: &[T]) -> Result<Vec<T>> {
    normalize_weights_with(weights, None)
}

/// Rescales positive weights to mean one under optional unit weights `u`,
/// i.e. so that `sum_i u_i w_i / sum_i u_i = 1`.
pub fn normalize_weights_with<T: Real>(weights: &[T], unit: Option<&[T]>) -> Result<Vec<T>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no weights to normalize".into()));
    }
    if let Some(w) = weights
        .iter()
        .find(|w| !(**w > T::zero()) || !w.is_finite())
    {
        return Err(Error::InvalidArgument(format!(
            "weight {w} is not positive and finite"
        )));
    }
    let (num, den) = match unit {
        Some(u) => {
            if u.len() != weights.len() {
                return Err(Error::Dimension("unit weights do not match".into()));
            }
            (
                weights.iter().zip(u).map(|(&w, &v)| w * v).sum::<T>(),
                u.iter().copied().sum::<T>(),
            )
        }
        None => (
            weights.iter().copied().sum::<T>(),
            T::from_count(weights.len()),
        ),
    };
    let mean = num / den;
    Ok(weights.iter().map(|&w| w / mean).collect())
}

fn lookup<T: Real>(
    curve: &MarginalCurve<T>,
    d: T,
    unit: &str,
    policy: ExtrapolationPolicy,
    clamped: &mut usize,
) -> Result<T> {
    match curve.try_eval(d) {
        Some(v) => Ok(v),
        None => match policy {
            ExtrapolationPolicy::Error => Err(Error::Extrapolation {
                unit: unit.to_string(),
                dose: d.as_f64(),
            }),
            ExtrapolationPolicy::Clamp => {
                *clamped += 1;
                Ok(curve.eval_clamped(d).0)
            }
        },
    }
}

/// Dose-side pseudo-outcomes of the treated units, in unit order.
#[derive(Debug, Clone, PartialEq)]
pub struct XiOutput<T> {
    pub treated: Vec<usize>,
    pub doses: Vec<T>,
    pub xi: Vec<T>,
    /// `f(D) / pi_D(D | X)` before normalization.
    pub w1_raw: Vec<T>,
    /// Normalized to (unit-weighted) mean one over the treated.
    pub w1: Vec<T>,
    /// `m(D_i)` for each treated unit.
    pub m_at_dose: Vec<T>,
    /// `mu1(D_i, X_i)` for each treated unit.
    pub mu1_at_dose: Vec<T>,
    /// Doses that fell outside the `m`/`f` tabulation and were clamped.
    pub clamped: usize,
}

/// `xi_i = m(D_i) + w1_i [(Y1 - Y0)_i - mu1(D_i, X_i)]` for treated `i`,
/// with `w1` the normalized generalized-propensity weight.
pub fn compute_xi<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    policy: ExtrapolationPolicy,
    unit_weights: Option<&[T]>,
) -> Result<XiOutput<T>> {
    let treated = data.treated_indices();
    if treated.is_empty() {
        return Err(Error::InsufficientData("no treated units".into()));
    }
    let (mu1, pi_d) = (models.mu1()?, models.pi_d()?);
    let (m, f) = (models.m_marginal()?, models.f_marginal()?);
    let mut clamped = 0;
    let mut doses = Vec::with_capacity(treated.len());
    let mut w1_raw = Vec::with_capacity(treated.len());
    let mut m_at_dose = Vec::with_capacity(treated.len());
    let mut mu1_at_dose = Vec::with_capacity(treated.len());
    for &i in &treated {
        let d = data.dose(i).expect("treated dose");
        let x = data.x_row(i);
        let id = &data.ids()[i];
        let f_d = lookup(f, d, id, policy, &mut clamped)?;
        m_at_dose.push(lookup(m, d, id, policy, &mut clamped)?);
        w1_raw.push(f_d / pi_d.density(d, x));
        mu1_at_dose.push(mu1.eval(d, x));
        doses.push(d);
    }
    let tw: Option<Vec<T>> = unit_weights.map(|u| treated.iter().map(|&i| u[i]).collect());
    let w1 = normalize_weights_with(&w1_raw, tw.as_deref())?;
    let xi = treated
        .iter()
        .enumerate()
        .map(|(k, &i)| m_at_dose[k] + w1[k] * (data.trend(i) - mu1_at_dose[k]))
        .collect();
    Ok(XiOutput {
        treated,
        doses,
        xi,
        w1_raw,
        w1,
        m_at_dose,
        mu1_at_dose,
        clamped,
    })
}

/// Control-side component `theta0 = theta00 + theta01`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta0Output<T> {
    pub controls: Vec<usize>,
    pub theta00: T,
    pub theta01: T,
    /// `pi_A / (1 - pi_A)` per control before normalization.
    pub w0_raw: Vec<T>,
    /// Normalized to (unit-weighted) mean one over the controls.
    pub w0: Vec<T>,
    /// `(Y1 - Y0) - mu0(X)` per control.
    pub residuals: Vec<T>,
    /// `mu0(X)` per treated unit.
    pub mu0_treated: Vec<T>,
}

impl<T: Real> Theta0Output<T> {
    pub fn theta0(&self) -> T {
        self.theta00 + self.theta01
    }
}

/// `theta01` averages `mu0` over the treated; `theta00` is the
/// Hajek-weighted control mean of `(Y1 - Y0) - mu0(X)` with odds weights
/// `pi_A / (1 - pi_A)` normalized to mean one over the controls.
pub fn compute_theta0<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    unit_weights: Option<&[T]>,
) -> Result<Theta0Output<T>> {
    let controls = data.control_indices();
    let treated = data.treated_indices();
    if controls.is_empty() || treated.is_empty() {
        return Err(Error::InsufficientData(
            "both groups must be nonempty".into(),
        ));
    }
    let (pi_a, mu0) = (models.pi_a()?, models.mu0()?);
    let u = |i: usize| unit_weights.map_or(T::one(), |w| w[i]);

    let mu0_treated: Vec<T> = treated.iter().map(|&i| mu0.eval(data.x_row(i))).collect();
    let (num, den) = treated
        .iter()
        .zip(&mu0_treated)
        .fold((T::zero(), T::zero()), |(a, b), (&i, &m)| {
            (a + u(i) * m, b + u(i))
        });
    let theta01 = num / den;

    let w0_raw: Vec<T> = controls
        .iter()
        .map(|&i| {
            let p = pi_a.prob(data.x_row(i));
            p / (T::one() - p)
        })
        .collect();
    let cw: Option<Vec<T>> = unit_weights.map(|w| controls.iter().map(|&i| w[i]).collect());
    let w0 = normalize_weights_with(&w0_raw, cw.as_deref())?;
    let residuals: Vec<T> = controls
        .iter()
        .map(|&i| data.trend(i) - mu0.eval(data.x_row(i)))
        .collect();
    let (num, den) = controls
        .iter()
        .enumerate()
        .fold((T::zero(), T::zero()), |(a, b), (k, &i)| {
            (a + u(i) * w0[k] * residuals[k], b + u(i))
        });
    let theta00 = num / den;
    Ok(Theta0Output {
        controls,
        theta00,
        theta01,
        w0_raw,
        w0,
        residuals,
        mu0_treated,
    })
}

/// Everything the dose-curve regression and the sandwich need.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomeSet<T> {
    pub xi: XiOutput<T>,
    pub theta: Theta0Output<T>,
    /// Sample proportion `n_A / n` (unit-weighted).
    pub p_a1: T,
}

impl<T: Real> PseudoOutcomeSet<T> {
    pub fn theta0(&self) -> T {
        self.theta.theta0()
    }
}

pub fn build_pseudo_outcomes<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    policy: ExtrapolationPolicy,
    unit_weights: Option<&[T]>,
) -> Result<PseudoOutcomeSet<T>> {
    Ok(PseudoOutcomeSet {
        xi: compute_xi(data, models, policy, unit_weights)?,
        theta: compute_theta0(data, models, unit_weights)?,
        p_a1: treated_share(data, unit_weights),
    })
}

/// Unit-weighted share of treated units.
pub fn treated_share<T: Real>(data: &TwoPeriodDataset<T>, unit_weights: Option<&[T]>) -> T {
    let u = |i: usize| unit_weights.map_or(T::one(), |w| w[i]);
    let total: T = (0..data.n()).map(u).sum();
    let treated: T = data.treated_indices().into_iter().map(u).sum();
    treated / total
}

/// Average over treated units of `integral [mu1(d, X_i) - m(d)] f(d) dd`,
/// by the trapezoid rule on the tabulation grid of `m` and `f`. Vanishes
/// when `m` is the empirical average of `mu1`.
pub fn j_term<T: Real>(data: &TwoPeriodDataset<T>, models: &NuisanceModelSet<T>) -> Result<T> {
    let (mu1, m, f) = (models.mu1()?, models.m_marginal()?, models.f_marginal()?);
    let grid = m.grid();
    if f.grid() != grid {
        return Err(Error::Dimension(
            "m and f are tabulated on different grids".into(),
        ));
    }
    let treated = data.treated_indices();
    let mut buf = vec![T::zero(); grid.len()];
    let mut total = T::zero();
    for &i in &treated {
        mu1.eval_many(grid, data.x_row(i), &mut buf);
        let integrand: Vec<T> = buf
            .iter()
            .zip(m.values())
            .zip(f.values())
            .map(|((&a, &b), &c)| (a - b) * c)
            .collect();
        total += trapezoid(grid, &integrand);
    }
    Ok(total / T::from_count(treated.len()))
}
