//! Descriptive statistics helpers.

use crate::scalar::Real;

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

pub fn weighted_mean<T: Real>(xs: &[T], ws: &[T]) -> T {
    let (mut num, mut den) = (T::zero(), T::zero());
    for (&x, &w) in xs.iter().zip(ws) {
        num += w * x;
        den += w;
    }
    num / den
}

/// Sample standard deviation with `n - 1` denominator.
pub fn std_dev<T: Real>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_count(n - 1)).sqrt()
}

/// Weighted standard deviation, with frequency-style `n - 1` correction
/// after rescaling the weights to sum to `n`.
pub fn weighted_std_dev<T: Real>(xs: &[T], ws: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let total: T = ws.iter().copied().sum();
    let m = weighted_mean(xs, ws);
    let ss: T = xs
        .iter()
        .zip(ws)
        .map(|(&x, &w)| w * (x - m) * (x - m))
        .sum();
    let nn = T::from_count(n);
    (ss * nn / total / (nn - T::one())).sqrt()
}

/// Linear-interpolation quantile of already sorted data (type 7).
pub fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    if n == 0 {
        return T::nan();
    }
    if n == 1 {
        return sorted[0];
    }
    let pos = q.max(T::zero()).min(T::one()) * T::from_count(n - 1);
    let lo = pos.floor();
    let lo_i = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_i = (lo_i + 1).min(n - 1);
    let frac = pos - lo;
    sorted[lo_i] + (sorted[hi_i] - sorted[lo_i]) * frac
}

pub fn quantile<T: Real>(xs: &[T], q: T) -> T {
    let mut s = xs.to_vec();
    sort_floats(&mut s);
    quantile_sorted(&s, q)
}

pub fn sort_floats<T: Real>(xs: &mut [T]) {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_count(n - 1);
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        lo + step * T::from_count(i)
                    }
                })
                .collect()
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive; both must be positive.
pub fn logspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(|v: T| v.exp())
        .collect()
}

/// Trapezoid rule for tabulated `ys` over increasing `xs`.
pub fn trapezoid<T: Real>(xs: &[T], ys: &[T]) -> T {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / T::lit(2.0))
        .sum()
}
