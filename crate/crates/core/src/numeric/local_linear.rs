//! Local linear kernel regression and leave-one-out bandwidth selection.

use crate::error::{Error, Result};
use crate::numeric::kernel::KernelSpec;
use crate::numeric::stats::{logspace, weighted_std_dev};
use crate::scalar::Real;

/// Kernel-weighted moments of a single local linear fit.
#[derive(Debug, Clone, Copy)]
struct Moments<T> {
    s0: T,
    s1: T,
    s2: T,
    t0: T,
    t1: T,
    count: usize,
}

impl<T: Real> Moments<T> {
    fn zero() -> Self {
        Self {
            s0: T::zero(),
            s1: T::zero(),
            s2: T::zero(),
            t0: T::zero(),
            t1: T::zero(),
            count: 0,
        }
    }

    #[inline]
    fn add(&mut self, u: T, k: T, y: T) {
        let ku = k * u;
        self.s0 += k;
        self.s1 += ku;
        self.s2 += ku * u;
        self.t0 += k * y;
        self.t1 += ku * y;
        self.count += 1;
    }

    /// Solves the 2x2 normal equations; `None` when degenerate.
    fn solve(&self) -> Option<(T, T)> {
        if self.count < 2 {
            return None;
        }
        let det = self.s0 * self.s2 - self.s1 * self.s1;
        if !(det > T::epsilon() * T::lit(64.0) * self.s0 * self.s2) {
            return None;
        }
        let a = (self.s2 * self.t0 - self.s1 * self.t1) / det;
        let b = (self.s0 * self.t1 - self.s1 * self.t0) / det;
        Some((a, b))
    }
}

/// Local linear estimate at `delta`: weighted least squares of `ys` on
/// `(1, (xs - delta) / h)` with kernel weights. Returns `(intercept, slope)`
/// where the slope is on the standardized `(x - delta) / h` scale.
pub fn local_linear_fit<T: Real>(
    xs: &[T],
    ys: &[T],
    h: T,
    delta: T,
    kernel: KernelSpec,
) -> Result<(T, T)> {
    local_linear_fit_weighted(xs, ys, None, h, delta, kernel)
}

/// As [`local_linear_fit`], with optional per-observation weights that
/// multiply the kernel weights.
pub fn local_linear_fit_weighted<T: Real>(
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
    h: T,
    delta: T,
    kernel: KernelSpec,
) -> Result<(T, T)> {
    check_inputs(xs, ys, weights)?;
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    let mut m = Moments::zero();
    for i in 0..xs.len() {
        let u = (xs[i] - delta) / h;
        let k = kernel.eval(u) * weights.map_or(T::one(), |w| w[i]);
        if k > T::zero() {
            m.add(u, k, ys[i]);
        }
    }
    m.solve().ok_or(Error::BandwidthTooSmall {
        delta: delta.as_f64(),
    })
}

fn check_inputs<T: Real>(xs: &[T], ys: &[T], weights: Option<&[T]>) -> Result<()> {
    if xs.len() != ys.len() || weights.is_some_and(|w| w.len() != xs.len()) {
        return Err(Error::Dimension(format!(
            "{} abscissae, {} responses, {} weights",
            xs.len(),
            ys.len(),
            weights.map_or(xs.len(), <[T]>::len)
        )));
    }
    Ok(())
}

/// Twenty log-spaced candidates from `0.5 s n^(-1/5)` to `4 s n^(-1/5)`,
/// where `s` is the (weighted) standard deviation of `xs`.
pub fn default_bandwidth_grid<T: Real>(xs: &[T], weights: Option<&[T]>) -> Result<Vec<T>> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "{n} points for a bandwidth grid"
        )));
    }
    let s = match weights {
        Some(w) => weighted_std_dev(xs, w),
        None => weighted_std_dev(xs, &vec![T::one(); n]),
    };
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::DegenerateExposure("abscissae have no spread".into()));
    }
    let base = s * T::from_count(n).powf(T::lit(-0.2));
    Ok(logspace(T::lit(0.5) * base, T::lit(4.0) * base, 20))
}

/// Leave-one-out squared prediction error of the local linear smoother at
/// bandwidth `h`, summed with observation weights. `None` if any
/// leave-one-out fit is infeasible.
pub fn loo_error<T: Real>(
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
    h: T,
    kernel: KernelSpec,
) -> Result<Option<T>> {
    check_inputs(xs, ys, weights)?;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sx: Vec<T> = order.iter().map(|&i| xs[i]).collect();
    let sy: Vec<T> = order.iter().map(|&i| ys[i]).collect();
    let sw: Vec<T> = order
        .iter()
        .map(|&i| weights.map_or(T::one(), |w| w[i]))
        .collect();
    Ok(sorted_loo_error(&sx, &sy, &sw, h, kernel))
}

fn sorted_loo_error<T: Real>(xs: &[T], ys: &[T], ws: &[T], h: T, kernel: KernelSpec) -> Option<T> {
    let n = xs.len();
    let mut total = T::zero();
    let mut lo = 0;
    for i in 0..n {
        if ws[i] == T::zero() {
            continue;
        }
        let x0 = xs[i];
        while lo < n && xs[lo] <= x0 - h {
            lo += 1;
        }
        let mut m = Moments::zero();
        let mut j = lo;
        while j < n && xs[j] < x0 + h {
            if j != i {
                let u = (xs[j] - x0) / h;
                let k = kernel.eval(u) * ws[j];
                if k > T::zero() {
                    m.add(u, k, ys[j]);
                }
            }
            j += 1;
        }
        let (fit, _) = m.solve()?;
        let r = ys[i] - fit;
        total += ws[i] * r * r;
    }
    Some(total)
}

/// Candidate bandwidth minimizing the leave-one-out error.
///
/// Candidates are scanned in increasing order and a later one replaces the
/// incumbent only when strictly better beyond a rounding tolerance, so ties
/// go to the smaller bandwidth. Infeasible candidates are skipped.
pub fn select_bandwidth<T: Real>(xs: &[T], ys: &[T], grid: &[T], kernel: KernelSpec) -> Result<T> {
    select_bandwidth_weighted(xs, ys, None, grid, kernel)
}

pub fn select_bandwidth_weighted<T: Real>(
    xs: &[T],
    ys: &[T],
    weights: Option<&[T]>,
    grid: &[T],
    kernel: KernelSpec,
) -> Result<T> {
    check_inputs(xs, ys, weights)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty bandwidth grid".into()));
    }
    if grid.iter().any(|h| !(*h > T::zero()) || !h.is_finite()) {
        return Err(Error::InvalidArgument(
            "bandwidth candidates must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sx: Vec<T> = order.iter().map(|&i| xs[i]).collect();
    let sy: Vec<T> = order.iter().map(|&i| ys[i]).collect();
    let sw: Vec<T> = order
        .iter()
        .map(|&i| weights.map_or(T::one(), |w| w[i]))
        .collect();
    let energy: T = sy.iter().zip(&sw).map(|(&y, &w)| w * y * y).sum();

    let mut candidates = grid.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best: Option<(T, T)> = None;
    for h in candidates {
        let Some(err) = sorted_loo_error(&sx, &sy, &sw, h, kernel) else {
            continue;
        };
        best = match best {
            None => Some((h, err)),
            Some((bh, be)) => {
                let tol = T::lit(1e-10) * be + T::lit(1e-12) * energy;
                if err < be - tol {
                    Some((h, err))
                } else {
                    Some((bh, be))
                }
            }
        };
    }
    best.map(|(h, _)| h).ok_or(Error::NoFeasibleBandwidth)
}
