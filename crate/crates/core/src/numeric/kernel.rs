//! Smoothing kernels with compact support.

use crate::scalar::Real;

/// Kernel used by the local linear smoother.
///
/// Only the Epanechnikov kernel `0.75 (1 - u^2)` on `[-1, 1]` is offered;
/// its compact support makes "points inside the window" well defined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
}

impl KernelSpec {
    /// Kernel value at `u`; exactly zero for `|u| >= 1`.
    #[inline]
    pub fn eval<T: Real>(self, u: T) -> T {
        match self {
            KernelSpec::Epanechnikov => {
                let v = T::one() - u * u;
                if v > T::zero() {
                    T::lit(0.75) * v
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn support(self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}
