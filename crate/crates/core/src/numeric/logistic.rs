//! Binary logistic regression by iteratively reweighted least squares.

use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, Matrix};
use crate::numeric::wls::fit_wls;
use crate::scalar::Real;

pub const PROBABILITY_CLIP: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;
pub const COEFFICIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
}

#[inline]
pub fn expit<T: Real>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn clip_probability<T: Real>(p: T) -> T {
    let lo = T::lit(PROBABILITY_CLIP);
    p.max(lo).min(T::one() - lo)
}

impl<T: Real> LogisticFit<T> {
    #[inline]
    pub fn linear_predictor(&self, row: &[T]) -> T {
        dot(&self.coefficients, row)
    }

    /// Fitted probability, clipped to `[1e-6, 1 - 1e-6]`.
    #[inline]
    pub fn probability(&self, row: &[T]) -> T {
        clip_probability(expit(self.linear_predictor(row)))
    }
}

pub fn fit_logistic<T: Real>(design: &Matrix<T>, labels: &[bool]) -> Result<LogisticFit<T>> {
    let ones = vec![T::one(); labels.len()];
    fit_logistic_weighted(design, labels, &ones)
}

/// Weighted maximum likelihood; each unit's log-likelihood contribution is
/// multiplied by its weight.
pub fn fit_logistic_weighted<T: Real>(
    design: &Matrix<T>,
    labels: &[bool],
    weights: &[T],
) -> Result<LogisticFit<T>> {
    let (n, q) = (design.rows(), design.cols());
    if labels.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, labels {} and weights {}",
            labels.len(),
            weights.len()
        )));
    }
    if q > n {
        return Err(Error::Dimension(format!("{q} coefficients from {n} rows")));
    }
    if design.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic design".into()));
    }
    let has = |class: bool| {
        labels
            .iter()
            .zip(weights)
            .any(|(&l, &w)| l == class && w > T::zero())
    };
    if !has(true) || !has(false) {
        return Err(Error::SingleClass);
    }

    let tol = T::lit(COEFFICIENT_TOLERANCE);
    let mut beta = vec![T::zero(); q];
    let mut working = vec![T::zero(); n];
    let mut irls_w = vec![T::zero(); n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for i in 0..n {
            let eta = dot(&beta, design.row(i));
            let p = clip_probability(expit(eta));
            let v = p * (T::one() - p);
            let y = if labels[i] { T::one() } else { T::zero() };
            working[i] = eta + (y - p) / v;
            irls_w[i] = weights[i] * v;
        }
        let next = match fit_wls(design, &working, &irls_w) {
            Ok(fit) => fit.coefficients,
            Err(Error::Singular(_)) => break,
            Err(e) => return Err(e),
        };
        if next.iter().any(|b| !b.is_finite()) {
            break;
        }
        let change = next
            .iter()
            .zip(&beta)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        beta = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit {
        coefficients: beta,
        converged,
        iterations,
    })
}

/// Inverse observed information `(X' W V X)^{-1}` at the fitted coefficients.
pub fn logistic_covariance<T: Real>(
    fit: &LogisticFit<T>,
    design: &Matrix<T>,
    weights: &[T],
) -> Result<Matrix<T>> {
    let q = design.cols();
    let mut info = Matrix::zeros(q, q);
    for i in 0..design.rows() {
        let row = design.row(i);
        let p = fit.probability(row);
        let v = weights[i] * p * (T::one() - p);
        for a in 0..q {
            for b in 0..q {
                info[(a, b)] += v * row[a] * row[b];
            }
        }
    }
    info.inverse()
}
