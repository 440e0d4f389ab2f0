//! Gaussian kernel density estimation.

use crate::error::{Error, Result};
use crate::numeric::stats::weighted_std_dev;
use crate::scalar::Real;

/// Gaussian-kernel density estimate over a (possibly weighted) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate<T> {
    pub samples: Vec<T>,
    /// Normalized to sum to one.
    pub weights: Vec<T>,
    pub bandwidth: T,
}

/// Silverman's rule `1.06 s n^(-1/5)`.
pub fn silverman_bandwidth<T: Real>(samples: &[T], weights: &[T]) -> T {
    let s = weighted_std_dev(samples, weights);
    T::lit(1.06) * s * T::from_count(samples.len()).powf(T::lit(-0.2))
}

pub fn gaussian_kde<T: Real>(samples: &[T], bandwidth: Option<T>) -> Result<DensityEstimate<T>> {
    gaussian_kde_weighted(samples, &vec![T::one(); samples.len()], bandwidth)
}

pub fn gaussian_kde_weighted<T: Real>(
    samples: &[T],
    weights: &[T],
    bandwidth: Option<T>,
) -> Result<DensityEstimate<T>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "kernel density needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if weights.len() != samples.len() {
        return Err(Error::Dimension(
            "kde weights and samples differ in length".into(),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kde sample".into()));
    }
    let total: T = weights.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::ZeroWeights);
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples, weights));
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::DegenerateExposure(format!(
            "kde bandwidth {h} is not positive"
        )));
    }
    Ok(DensityEstimate {
        samples: samples.to_vec(),
        weights: weights.iter().map(|&w| w / total).collect(),
        bandwidth: h,
    })
}

impl<T: Real> DensityEstimate<T> {
    pub fn evaluate(&self, x: T) -> T {
        let h = self.bandwidth;
        let norm = T::one() / (h * (T::TAU()).sqrt());
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for (&s, &w) in self.samples.iter().zip(&self.weights) {
            let z = (x - s) / h;
            acc += w * (-half * z * z).exp();
        }
        acc * norm
    }

    pub fn support(&self) -> (T, T) {
        let (lo, hi) = self
            .samples
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        (lo, hi)
    }

    /// Tabulates the density on a grid with step `bandwidth / 8` spanning the
    /// samples padded by eight bandwidths.
    pub fn tabulate(&self) -> TabulatedDensity<T> {
        let (lo, hi) = self.support();
        let pad = T::lit(8.0) * self.bandwidth;
        let start = lo - pad;
        let step = self.bandwidth / T::lit(8.0);
        let count = ((hi + pad - start) / step).ceil().to_usize().unwrap_or(0) + 1;
        let values = (0..count)
            .map(|k| self.evaluate(start + step * T::from_count(k)))
            .collect();
        TabulatedDensity {
            start,
            step,
            values,
        }
    }
}

/// Density values on an equally spaced grid, linearly interpolated between
/// nodes and zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity<T> {
    pub start: T,
    pub step: T,
    pub values: Vec<T>,
}

impl<T: Real> TabulatedDensity<T> {
    #[inline]
    pub fn evaluate(&self, x: T) -> T {
        let pos = (x - self.start) / self.step;
        if !(pos >= T::zero()) {
            return T::zero();
        }
        let k = pos.floor();
        let i = match k.to_usize() {
            Some(i) if i + 1 < self.values.len() => i,
            _ => return T::zero(),
        };
        let frac = pos - k;
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }
}
