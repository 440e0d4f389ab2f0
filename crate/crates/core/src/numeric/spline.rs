//! Natural cubic spline bases for the flexible additive learner.

use crate::error::{Error, Result};
use crate::numeric::stats::{quantile_sorted, sort_floats, weighted_mean, weighted_std_dev};
use crate::scalar::Real;

/// Knot quantiles: boundary knots at the extremes plus four interior knots.
pub const KNOT_QUANTILES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Truncated-power natural cubic spline basis on a standardized variable.
///
/// The basis is linear beyond the boundary knots. The constant function is
/// not part of the basis; designs add their own intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline<T> {
    center: T,
    scale: T,
    knots: Vec<T>,
}

impl<T: Real> NaturalSpline<T> {
    /// Places knots at quantiles of the positively weighted `values`.
    pub fn fit(values: &[T], weights: &[T]) -> Result<Self> {
        let kept: Vec<(T, T)> = values
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > T::zero())
            .map(|(&v, &w)| (v, w))
            .collect();
        if kept.len() < 2 {
            return Err(Error::InsufficientData(
                "spline needs two weighted points".into(),
            ));
        }
        let (vs, ws): (Vec<T>, Vec<T>) = kept.into_iter().unzip();
        let center = weighted_mean(&vs, &ws);
        let scale = weighted_std_dev(&vs, &ws);
        if !(scale > T::zero()) {
            return Err(Error::InvalidSpec(
                "spline term on a constant variable".into(),
            ));
        }
        let mut z: Vec<T> = vs.iter().map(|&v| (v - center) / scale).collect();
        sort_floats(&mut z);
        let mut knots: Vec<T> = KNOT_QUANTILES
            .iter()
            .map(|&q| quantile_sorted(&z, T::lit(q)))
            .collect();
        knots.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-9));
        Ok(Self {
            center,
            scale,
            knots,
        })
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        if self.knots.len() >= 3 {
            self.knots.len() - 1
        } else {
            1
        }
    }

    pub fn basis_value(&self, x: T, k: usize) -> T {
        let z = (x - self.center) / self.scale;
        if k == 0 {
            return z;
        }
        let last = self.knots.len() - 1;
        self.truncated(z, k - 1) - self.truncated(z, last - 1)
    }

    pub fn basis(&self, x: T) -> Vec<T> {
        (0..self.dim()).map(|k| self.basis_value(x, k)).collect()
    }

    fn truncated(&self, z: T, k: usize) -> T {
        let last = self.knots.len() - 1;
        let cube = |v: T| {
            let p = v.max(T::zero());
            p * p * p
        };
        (cube(z - self.knots[k]) - cube(z - self.knots[last])) / (self.knots[last] - self.knots[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_beyond_boundary_knots() {
        let xs: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.05)
            .collect();
        let s = NaturalSpline::fit(&xs, &vec![1.0; 50]).unwrap();
        assert_eq!(s.dim(), 5);
        let hi = xs.iter().cloned().fold(f64::MIN, f64::max);
        for k in 0..s.dim() {
            let f = |x: f64| s.basis_value(x, k);
            let second = f(hi + 3.0) - 2.0 * f(hi + 2.0) + f(hi + 1.0);
            assert!(second.abs() < 1e-9, "basis {k} curves past the boundary");
            let lo = xs.iter().cloned().fold(f64::MAX, f64::min);
            let second = f(lo - 3.0) - 2.0 * f(lo - 2.0) + f(lo - 1.0);
            assert!(second.abs() < 1e-9);
        }
    }

    #[test]
    fn discrete_variable_collapses_to_linear() {
        let xs = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let s = NaturalSpline::fit(&xs, &[1.0; 6]).unwrap();
        assert_eq!(s.dim(), 1);
    }

    #[test]
    fn constant_variable_rejected() {
        assert!(NaturalSpline::fit(&[2.0, 2.0, 2.0], &[1.0; 3]).is_err());
    }
}
