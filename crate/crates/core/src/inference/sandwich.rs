//! Sandwich variance of the multiply robust curve, pointwise in the dose.

use std::sync::Arc;

use rayon::prelude::*;

use crate::curves::{Method, MrFit};
use crate::data::TwoPeriodDataset;
use crate::error::{Error, Result};
use crate::nuisance::{
    DoseShape, ExtrapolationPolicy, FittedNuisances, NuisanceModelSet, Propensity,
};
use crate::numeric::{KernelSpec, Matrix};
use crate::pseudo::{compute_theta0, compute_xi, PseudoOutcomeSet, Theta0Output, XiOutput};
use crate::scalar::Real;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959963984540054;

/// Simpson intervals of the kernel-window integral in the `m` correction.
pub const CORRECTION_INTERVALS: usize = 64;

/// Relative step of the central differences in the augmented bread.
pub const DIFFERENCE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SandwichMode {
    /// Nuisance functions treated as known.
    #[default]
    Base,
    /// Parametric nuisance estimating equations stacked with the curve's.
    Augmented,
}

impl std::str::FromStr for SandwichMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(SandwichMode::Base),
            "augmented" => Ok(SandwichMode::Augmented),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sandwich mode '{s}'"
            ))),
        }
    }
}

/// Per-unit estimating-function values and the bread at each grid point.
///
/// Parameters are ordered `(theta, beta, theta00, theta01)` followed, in the
/// augmented mode, by the nuisance coefficients.
#[derive(Debug, Clone)]
pub struct EquationSystem<T> {
    pub grid: Vec<T>,
    pub psi: Vec<T>,
    /// `n x k` contributions per grid point.
    pub gamma: Vec<Matrix<T>>,
    /// `k x k` derivative of the summed equations per grid point.
    pub bread: Vec<Matrix<T>>,
    /// Linear functional of the parameters giving the curve.
    pub contrast: Vec<T>,
}

impl<T: Real> EquationSystem<T> {
    pub fn n(&self) -> usize {
        self.gamma.first().map_or(0, Matrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.contrast.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichBands<T> {
    pub grid: Vec<T>,
    pub psi: Vec<T>,
    pub variance: Vec<T>,
    pub se: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Grid indices where a negative variance was floored at zero.
    pub floored: Vec<usize>,
    /// Parameter covariance per grid point.
    pub covariance: Vec<Matrix<T>>,
}

/// `B^-1 (Gamma' Gamma) B^-T` from per-unit contributions and the bread.
pub fn sandwich_from_parts<T: Real>(gamma: &Matrix<T>, bread: &Matrix<T>) -> Result<Matrix<T>> {
    let k = bread.rows();
    if bread.cols() != k || gamma.cols() != k {
        return Err(Error::Dimension(format!(
            "gamma has {} columns, bread is {}x{}",
            gamma.cols(),
            bread.rows(),
            bread.cols()
        )));
    }
    let mut meat = Matrix::zeros(k, k);
    for i in 0..gamma.rows() {
        let g = gamma.row(i);
        for a in 0..k {
            if g[a] == T::zero() {
                continue;
            }
            for b in 0..k {
                meat[(a, b)] += g[a] * g[b];
            }
        }
    }
    let inv = bread.inverse()?;
    inv.matmul(&meat)?.matmul(&inv.transpose())
}

/// Sandwich bands of one fitted multiply robust curve.
pub fn sandwich_bands<T: Real>(
    data: &TwoPeriodDataset<T>,
    fit: &MrFit<T>,
    kernel: KernelSpec,
    mode: SandwichMode,
) -> Result<SandwichBands<T>> {
    stacked_sandwich(&[equation_system(data, fit, kernel, mode)?])
}

/// Variance of the average of `M` curves estimated on the same units, with
/// block-diagonal bread and the full cross-system meat.
pub fn stacked_sandwich<T: Real>(systems: &[EquationSystem<T>]) -> Result<SandwichBands<T>> {
    let first = systems
        .first()
        .ok_or_else(|| Error::InvalidArgument("no estimating systems to stack".into()))?;
    let (n, len) = (first.n(), first.grid.len());
    if systems
        .iter()
        .any(|s| s.n() != n || s.grid.len() != len || s.gamma.len() != len)
    {
        return Err(Error::Dimension(
            "stacked systems differ in units or grid length".into(),
        ));
    }
    let m = T::from_count(systems.len());
    let dims: Vec<usize> = systems.iter().map(EquationSystem::dim).collect();
    let k: usize = dims.iter().sum();
    let contrast: Vec<T> = systems
        .iter()
        .flat_map(|s| s.contrast.iter().map(move |&c| c / m))
        .collect();
    let z = T::lit(Z_975);
    let mut out = SandwichBands {
        grid: first.grid.clone(),
        psi: Vec::with_capacity(len),
        variance: Vec::with_capacity(len),
        se: Vec::with_capacity(len),
        lower: Vec::with_capacity(len),
        upper: Vec::with_capacity(len),
        floored: Vec::new(),
        covariance: Vec::with_capacity(len),
    };
    for g in 0..len {
        let v = if systems.len() == 1 {
            sandwich_from_parts(&first.gamma[g], &first.bread[g])?
        } else {
            let mut gamma = Matrix::zeros(n, k);
            let mut bread = Matrix::zeros(k, k);
            let mut offset = 0;
            for (s, &d) in systems.iter().zip(&dims) {
                for i in 0..n {
                    gamma.row_mut(i)[offset..offset + d].copy_from_slice(s.gamma[g].row(i));
                }
                for a in 0..d {
                    for b in 0..d {
                        bread[(offset + a, offset + b)] = s.bread[g][(a, b)];
                    }
                }
                offset += d;
            }
            sandwich_from_parts(&gamma, &bread)?
        };
        let mut var = T::zero();
        for a in 0..k {
            for b in 0..k {
                var += contrast[a] * v[(a, b)] * contrast[b];
            }
        }
        if var < T::zero() {
            out.floored.push(g);
            var = T::zero();
        }
        let psi = systems.iter().map(|s| s.psi[g]).sum::<T>() / m;
        let se = var.sqrt();
        out.psi.push(psi);
        out.variance.push(var);
        out.se.push(se);
        out.lower.push(psi - z * se);
        out.upper.push(psi + z * se);
        out.covariance.push(v);
    }
    Ok(out)
}

/// Simpson nodes and weights on `[a, b]`.
fn simpson(a: f64, b: f64, intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let step = (b - a) / intervals as f64;
    let nodes = (0..=intervals).map(|k| a + step * k as f64).collect();
    let weights = (0..=intervals)
        .map(|k| {
            let c = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * step / 3.0
        })
        .collect();
    (nodes, weights)
}

/// Per treated unit, `integral K_h(d - delta) (1, (d - delta) / h) [mu1(d, X_i) - m(d)] f(d) dd`
/// over the kernel window clipped to the tabulated dose range, with `m` and
/// `f` evaluated exactly at the quadrature nodes.
fn correction_terms<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    treated: &[usize],
    delta: T,
    h: T,
    kernel: KernelSpec,
) -> Result<Vec<(T, T)>> {
    let (mu1, pi_d) = (models.mu1()?, models.pi_d()?);
    let (lo, hi) = models.m_marginal()?.range();
    let (a, b) = ((delta - h).max(lo), (delta + h).min(hi));
    if !(a < b) {
        return Ok(vec![(T::zero(), T::zero()); treated.len()]);
    }
    let (nodes, weights) = simpson(a.as_f64(), b.as_f64(), CORRECTION_INTERVALS);
    let nodes: Vec<T> = nodes.into_iter().map(T::lit).collect();
    let rows: Vec<&[T]> = treated.iter().map(|&i| data.x_row(i)).collect();
    let ones = vec![T::one(); rows.len()];
    let m = mu1.weighted_average(&nodes, &rows, &ones);
    let mut f = vec![T::zero(); nodes.len()];
    let mut buf = vec![T::zero(); nodes.len()];
    for x in &rows {
        pi_d.density_many(&nodes, x, &mut buf);
        for (acc, &v) in f.iter_mut().zip(&buf) {
            *acc += v;
        }
    }
    let count = T::from_count(rows.len());
    let (mut c0, mut c1) = (
        Vec::with_capacity(nodes.len()),
        Vec::with_capacity(nodes.len()),
    );
    for (k, &d) in nodes.iter().enumerate() {
        let u = (d - delta) / h;
        let base = T::lit(weights[k]) * kernel.eval(u) / h * f[k] / count;
        c0.push(base);
        c1.push(base * u);
    }
    Ok(rows
        .iter()
        .map(|x| {
            mu1.eval_many(&nodes, x, &mut buf);
            let (mut s0, mut s1) = (T::zero(), T::zero());
            for k in 0..nodes.len() {
                let r = buf[k] - m[k];
                s0 += c0[k] * r;
                s1 += c1[k] * r;
            }
            (s0, s1)
        })
        .collect())
}

/// Kernel-regression equations `(EE1, EE2)` of each treated unit, in the
/// order of `xi.treated`.
#[allow(clippy::too_many_arguments)]
fn dose_equations<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    xi: &XiOutput<T>,
    delta: T,
    h: T,
    kernel: KernelSpec,
    theta: T,
    beta: T,
) -> Result<Vec<(T, T)>> {
    let correction = correction_terms(data, models, &xi.treated, delta, h, kernel)?;
    Ok(xi
        .doses
        .iter()
        .zip(&xi.xi)
        .zip(&correction)
        .map(|((&d, &v), &(c0, c1))| {
            let u = (d - delta) / h;
            let kw = kernel.eval(u) / h;
            let r = v - theta - beta * u;
            (kw * r + c0, kw * u * r + c1)
        })
        .collect())
}

/// Control-side equations: `EE3` per control and `EE4` per treated unit.
fn control_equations<T: Real>(theta: &Theta0Output<T>, theta00: T, theta01: T) -> (Vec<T>, Vec<T>) {
    let ee3 = theta
        .w0_raw
        .iter()
        .zip(&theta.residuals)
        .map(|(&w, &r)| w * (r - theta00))
        .collect();
    let ee4 = theta.mu0_treated.iter().map(|&m| m - theta01).collect();
    (ee3, ee4)
}

/// Contributions of the four curve equations at `eta = (theta, beta,
/// theta00, theta01)` for every unit, in unit order.
fn curve_equations<T: Real>(
    data: &TwoPeriodDataset<T>,
    models: &NuisanceModelSet<T>,
    pseudo: &PseudoOutcomeSet<T>,
    delta: T,
    h: T,
    kernel: KernelSpec,
    eta: [T; 4],
) -> Result<Vec<[T; 4]>> {
    let [theta, beta, theta00, theta01] = eta;
    let mut out = vec![[T::zero(); 4]; data.n()];
    let dose = dose_equations(data, models, &pseudo.xi, delta, h, kernel, theta, beta)?;
    let (ee3, ee4) = control_equations(&pseudo.theta, theta00, theta01);
    for (k, &i) in pseudo.xi.treated.iter().enumerate() {
        out[i][0] = dose[k].0;
        out[i][1] = dose[k].1;
        out[i][3] = ee4[k];
    }
    for (k, &c) in pseudo.theta.controls.iter().enumerate() {
        out[c][2] = ee3[k];
    }
    Ok(out)
}

/// Local linear intercept and slope (per unit of `(d - delta) / h`) of the
/// pseudo-outcomes at `delta`.
fn local_coefficients<T: Real>(
    pseudo: &PseudoOutcomeSet<T>,
    delta: T,
    h: T,
    kernel: KernelSpec,
) -> Result<(T, T)> {
    crate::numeric::local_linear_fit(&pseudo.xi.doses, &pseudo.xi.xi, h, delta, kernel)
}

/// Estimating equations of an unweighted MR fit.
pub fn equation_system<T: Real>(
    data: &TwoPeriodDataset<T>,
    fit: &MrFit<T>,
    kernel: KernelSpec,
    mode: SandwichMode,
) -> Result<EquationSystem<T>> {
    if fit.curve.method != Method::Mr {
        return Err(Error::InvalidArgument(format!(
            "sandwich bands need the MR method, got {}",
            fit.curve.method
        )));
    }
    let h = fit
        .curve
        .bandwidth
        .ok_or_else(|| Error::InvalidArgument("MR fit has no bandwidth".into()))?;
    let grid = &fit.curve.grid;
    let pseudo = &fit.pseudo;
    let n = data.n();
    let treated = &pseudo.xi.treated;
    let (theta00, theta01) = (pseudo.theta.theta00, pseudo.theta.theta01);
    let n_treated = T::from_count(treated.len());
    let w0_total: T = pseudo.theta.w0_raw.iter().copied().sum();

    let mut etas = Vec::with_capacity(grid.len());
    let mut gammas = Vec::with_capacity(grid.len());
    let mut breads = Vec::with_capacity(grid.len());
    for &delta in grid {
        let (theta, beta) = local_coefficients(pseudo, delta, h, kernel)?;
        let eta = [theta, beta, theta00, theta01];
        let rows = curve_equations(data, &fit.models, pseudo, delta, h, kernel, eta)?;
        let mut gamma = Matrix::zeros(n, 4);
        for (i, r) in rows.iter().enumerate() {
            gamma.row_mut(i).copy_from_slice(r);
        }
        let (mut s0, mut s1, mut s2) = (T::zero(), T::zero(), T::zero());
        for &d in &pseudo.xi.doses {
            let u = (d - delta) / h;
            let kw = kernel.eval(u) / h;
            s0 += kw;
            s1 += kw * u;
            s2 += kw * u * u;
        }
        let mut bread = Matrix::zeros(4, 4);
        bread[(0, 0)] = -s0;
        bread[(0, 1)] = -s1;
        bread[(1, 0)] = -s1;
        bread[(1, 1)] = -s2;
        bread[(2, 2)] = -w0_total;
        bread[(3, 3)] = -n_treated;
        etas.push(eta);
        gammas.push(gamma);
        breads.push(bread);
    }
    let mut system = EquationSystem {
        grid: grid.clone(),
        psi: fit.curve.psi.clone(),
        gamma: gammas,
        bread: breads,
        contrast: vec![T::one(), T::zero(), -T::one(), -T::one()],
    };
    if mode == SandwichMode::Augmented {
        augment(data, fit, kernel, h, &etas, &mut system)?;
    }
    Ok(system)
}

/// Nuisance parameters in stacking order.
struct NuisanceParameters<T> {
    alpha_a: Vec<T>,
    alpha_d: Vec<T>,
    sigma: T,
    lambda1: Vec<T>,
    lambda0: Vec<T>,
}

impl<T: Real> NuisanceParameters<T> {
    fn of(fitted: &FittedNuisances<T>) -> Result<Self> {
        let (pi_a, pi_d, mu1, mu0) = parts(fitted)?;
        let sigma = match pi_d.shape() {
            DoseShape::Normal { sigma } => *sigma,
            DoseShape::Kde { .. } => {
                return Err(Error::InvalidSpec(
                    "the augmented sandwich needs a normal dose density for pi_d".into(),
                ))
            }
        };
        Ok(Self {
            alpha_a: pi_a.fit().coefficients.clone(),
            alpha_d: pi_d.mean_model().coefficients().to_vec(),
            sigma,
            lambda1: mu1.coefficients().to_vec(),
            lambda0: mu0.coefficients().to_vec(),
        })
    }

    fn flatten(&self) -> Vec<T> {
        let mut v = self.alpha_a.clone();
        v.extend_from_slice(&self.alpha_d);
        v.push(self.sigma);
        v.extend_from_slice(&self.lambda1);
        v.extend_from_slice(&self.lambda0);
        v
    }

    /// Models with the flattened parameters `theta` substituted.
    fn rebuild(&self, fitted: &FittedNuisances<T>, theta: &[T]) -> Result<FittedNuisances<T>> {
        let (pi_a, pi_d, mu1, mu0) = parts(fitted)?;
        let (a, b, c) = (self.alpha_a.len(), self.alpha_d.len(), self.lambda1.len());
        let mut at = 0;
        let mut take = |len: usize| {
            let s = theta[at..at + len].to_vec();
            at += len;
            s
        };
        let alpha_a = take(a);
        let alpha_d = take(b);
        let sigma = take(1)[0];
        let lambda1 = take(c);
        let lambda0 = take(self.lambda0.len());
        Ok(FittedNuisances {
            pi_a: Some(Arc::new(pi_a.with_coefficients(alpha_a))),
            pi_d: Some(Arc::new(pi_d.with_normal_parameters(alpha_d, sigma))),
            mu1: Some(Arc::new(mu1.with_coefficients(lambda1))),
            mu0: Some(Arc::new(mu0.with_coefficients(lambda0))),
        })
    }
}

type Parts<'a, T> = (
    &'a crate::nuisance::FittedPropensity<T>,
    &'a crate::nuisance::FittedDoseDensity<T>,
    &'a crate::nuisance::FittedRegression<T>,
    &'a crate::nuisance::FittedRegression<T>,
);

fn parts<T: Real>(fitted: &FittedNuisances<T>) -> Result<Parts<'_, T>> {
    let missing = |k: &str| Error::MissingSpec(k.to_string());
    Ok((
        fitted.pi_a.as_deref().ok_or_else(|| missing("pi_a"))?,
        fitted.pi_d.as_deref().ok_or_else(|| missing("pi_d"))?,
        fitted.mu1.as_deref().ok_or_else(|| missing("mu1"))?,
        fitted.mu0.as_deref().ok_or_else(|| missing("mu0"))?,
    ))
}

/// Adds the nuisance estimating equations; the derivatives of the curve
/// equations in the nuisance parameters are central differences that
/// recompute `m`, `f`, the pseudo-outcomes and their normalizations.
fn augment<T: Real>(
    data: &TwoPeriodDataset<T>,
    fit: &MrFit<T>,
    kernel: KernelSpec,
    h: T,
    etas: &[[T; 4]],
    system: &mut EquationSystem<T>,
) -> Result<()> {
    let params = NuisanceParameters::of(&fit.fitted)?;
    let (pi_a, pi_d, mu1, mu0) = parts(&fit.fitted)?;
    let flat = params.flatten();
    let q = flat.len();
    let k = 4 + q;
    let n = data.n();
    let (a_len, b_len, c_len) = (
        params.alpha_a.len(),
        params.alpha_d.len(),
        params.lambda1.len(),
    );

    // Nuisance contributions and their (analytic) bread block.
    let mut nuis = Matrix::zeros(n, q);
    let mut nb = Matrix::zeros(q, q);
    let sigma = params.sigma;
    for i in 0..n {
        let x = data.x_row(i);
        let row = nuis.row_mut(i);
        let z = pi_a.design_row(x);
        let p = pi_a.prob(x);
        let resid_a = if data.treated(i) { T::one() - p } else { -p };
        for (j, &zj) in z.iter().enumerate() {
            row[j] = resid_a * zj;
        }
        let v = p * (T::one() - p);
        for a in 0..a_len {
            for b in 0..a_len {
                nb[(a, b)] -= v * z[a] * z[b];
            }
        }
        let trend = data.trend(i);
        if let Some(d) = data.dose(i).filter(|_| data.treated(i)) {
            let zd = pi_d.mean_model().design_row(T::zero(), x);
            let e = d - pi_d.location(x);
            for (j, &zj) in zd.iter().enumerate() {
                row[a_len + j] = e * zj;
            }
            row[a_len + b_len] = e * e - sigma * sigma;
            for a in 0..b_len {
                for b in 0..b_len {
                    nb[(a_len + a, a_len + b)] -= zd[a] * zd[b];
                }
                nb[(a_len + b_len, a_len + a)] -= T::lit(2.0) * e * zd[a];
            }
            nb[(a_len + b_len, a_len + b_len)] -= T::lit(2.0) * sigma;
            let g = mu1.design_row(d, x);
            let r = trend - mu1.predict(d, x);
            let base = a_len + b_len + 1;
            for (j, &gj) in g.iter().enumerate() {
                row[base + j] = r * gj;
            }
            for a in 0..c_len {
                for b in 0..c_len {
                    nb[(base + a, base + b)] -= g[a] * g[b];
                }
            }
        } else {
            let g = mu0.design_row(T::zero(), x);
            let r = trend - mu0.predict(T::zero(), x);
            let base = a_len + b_len + 1 + c_len;
            for (j, &gj) in g.iter().enumerate() {
                row[base + j] = r * gj;
            }
            for a in 0..g.len() {
                for b in 0..g.len() {
                    nb[(base + a, base + b)] -= g[a] * g[b];
                }
            }
        }
    }

    // Curve-equation sums under each perturbed parameter, shared across the
    // grid. The kernel equations involve only the dose-side nuisances and the
    // control equations only the others, so each perturbation recomputes one side.
    let grid = system.grid.clone();
    let dose_side = a_len..a_len + b_len + 1 + c_len;
    let evaluate = |j: usize, theta: &[T]| -> Result<Vec<[T; 4]>> {
        let fitted = params.rebuild(&fit.fitted, theta)?;
        if dose_side.contains(&j) {
            let models = fitted.marginalized(data, &grid, None)?;
            let xi = compute_xi(data, &models, ExtrapolationPolicy::Clamp, None)?;
            grid.iter()
                .zip(etas)
                .map(|(&delta, eta)| {
                    let rows =
                        dose_equations(data, &models, &xi, delta, h, kernel, eta[0], eta[1])?;
                    let (s0, s1) = rows
                        .iter()
                        .fold((T::zero(), T::zero()), |(a, b), &(x, y)| (a + x, b + y));
                    Ok([s0, s1, T::zero(), T::zero()])
                })
                .collect()
        } else {
            let control = compute_theta0(data, &fitted.model_set(), None)?;
            grid.iter()
                .zip(etas)
                .map(|(_, eta)| {
                    let (ee3, ee4) = control_equations(&control, eta[2], eta[3]);
                    Ok([
                        T::zero(),
                        T::zero(),
                        ee3.into_iter().sum(),
                        ee4.into_iter().sum(),
                    ])
                })
                .collect()
        }
    };
    let columns: Vec<Vec<[T; 4]>> = (0..q)
        .into_par_iter()
        .map(|j| {
            let step = T::lit(DIFFERENCE_STEP) * flat[j].abs().max(T::one());
            let mut plus = flat.clone();
            plus[j] += step;
            let mut minus = flat.clone();
            minus[j] -= step;
            let (up, down) = (evaluate(j, &plus)?, evaluate(j, &minus)?);
            let two = step + step;
            Ok(up
                .iter()
                .zip(&down)
                .map(|(u, d)| [0, 1, 2, 3].map(|r| (u[r] - d[r]) / two))
                .collect())
        })
        .collect::<Result<_>>()?;

    for g in 0..grid.len() {
        let mut gamma = Matrix::zeros(n, k);
        for i in 0..n {
            let row = gamma.row_mut(i);
            row[..4].copy_from_slice(system.gamma[g].row(i));
            row[4..].copy_from_slice(nuis.row(i));
        }
        let mut bread = Matrix::zeros(k, k);
        for a in 0..4 {
            for b in 0..4 {
                bread[(a, b)] = system.bread[g][(a, b)];
            }
            for (j, col) in columns.iter().enumerate() {
                bread[(a, 4 + j)] = col[g][a];
            }
        }
        for a in 0..q {
            for b in 0..q {
                bread[(4 + a, 4 + b)] = nb[(a, b)];
            }
        }
        system.gamma[g] = gamma;
        system.bread[g] = bread;
    }
    system.contrast.resize(k, T::zero());
    Ok(())
}
