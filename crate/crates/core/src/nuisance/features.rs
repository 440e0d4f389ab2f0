//! Design-matrix construction from term specifications.
//!
//! Every regressor is a product `g(d) h(w)` of a dose factor and a factor of
//! the mapped covariates `w`. Averaging a fitted model over units therefore
//! only needs per-column covariate averages.

use crate::error::{Error, Result};
use crate::nuisance::spec::{CovariateFactor, CovariateMap, DoseFactor, TermSpec};
use crate::numeric::spline::NaturalSpline;
use crate::numeric::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
enum DosePart {
    One,
    Power(i32),
    Spline(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CovPart {
    One,
    Power(usize, i32),
    Spline(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    map: CovariateMap,
    dose: Vec<DosePart>,
    cov: Vec<CovPart>,
    cov_splines: Vec<Option<NaturalSpline<T>>>,
    dose_spline: Option<NaturalSpline<T>>,
}

impl<T: Real> FeatureSet<T> {
    /// Expands `terms` into columns, placing spline knots from the training
    /// rows (`mapped` is row-major with `q` columns).
    pub fn build(
        terms: &[TermSpec],
        map: CovariateMap,
        mapped: &[T],
        q: usize,
        doses: Option<&[T]>,
        weights: &[T],
    ) -> Result<Self> {
        let n = weights.len();
        let mut cov_splines: Vec<Option<NaturalSpline<T>>> = vec![None; q];
        let mut dose_spline = None;
        for t in terms {
            if let CovariateFactor::Spline { index } = t.covariate {
                if cov_splines[index].is_none() {
                    let col: Vec<T> = (0..n).map(|i| mapped[i * q + index]).collect();
                    cov_splines[index] = Some(NaturalSpline::fit(&col, weights)?);
                }
            }
            if t.dose == DoseFactor::Spline && dose_spline.is_none() {
                let d =
                    doses.ok_or_else(|| Error::InvalidSpec("dose spline without doses".into()))?;
                dose_spline = Some(NaturalSpline::fit(d, weights)?);
            }
        }
        let mut dose = Vec::new();
        let mut cov = Vec::new();
        for t in terms {
            let dose_parts: Vec<DosePart> = match t.dose {
                DoseFactor::One => vec![DosePart::One],
                DoseFactor::Power(p) => vec![DosePart::Power(p as i32)],
                DoseFactor::Spline => (0..dose_spline.as_ref().map_or(0, NaturalSpline::dim))
                    .map(DosePart::Spline)
                    .collect(),
            };
            let cov_parts: Vec<CovPart> = match t.covariate {
                CovariateFactor::One => vec![CovPart::One],
                CovariateFactor::Power { index, power } => {
                    vec![CovPart::Power(index, power as i32)]
                }
                CovariateFactor::Spline { index } => {
                    (0..cov_splines[index].as_ref().map_or(0, NaturalSpline::dim))
                        .map(|k| CovPart::Spline(index, k))
                        .collect()
                }
            };
            for &dp in &dose_parts {
                for &cp in &cov_parts {
                    dose.push(dp);
                    cov.push(cp);
                }
            }
        }
        Ok(Self {
            map,
            dose,
            cov,
            cov_splines,
            dose_spline,
        })
    }

    pub fn dim(&self) -> usize {
        self.dose.len()
    }

    pub fn map(&self) -> CovariateMap {
        self.map
    }

    pub fn uses_dose(&self) -> bool {
        self.dose.iter().any(|d| *d != DosePart::One)
    }

    /// Covariate factor of every column at mapped covariates `w`.
    pub fn covariate_factors_into(&self, w: &[T], out: &mut [T]) {
        for (slot, part) in out.iter_mut().zip(&self.cov) {
            *slot = match *part {
                CovPart::One => T::one(),
                CovPart::Power(j, 1) => w[j],
                CovPart::Power(j, p) => w[j].powi(p),
                CovPart::Spline(j, k) => self.cov_splines[j]
                    .as_ref()
                    .expect("fitted spline")
                    .basis_value(w[j], k),
            };
        }
    }

    /// Dose factor of every column at dose `d`.
    pub fn dose_factors_into(&self, d: T, out: &mut [T]) {
        for (slot, part) in out.iter_mut().zip(&self.dose) {
            *slot = match *part {
                DosePart::One => T::one(),
                DosePart::Power(1) => d,
                DosePart::Power(p) => d.powi(p),
                DosePart::Spline(k) => self
                    .dose_spline
                    .as_ref()
                    .expect("fitted spline")
                    .basis_value(d, k),
            };
        }
    }

    /// Full design row at raw covariates `x`; `d` is ignored by dose-free sets.
    pub fn row_into(&self, d: T, x: &[T], mapped: &mut Vec<T>, out: &mut [T]) {
        self.map.apply_into(x, mapped);
        self.covariate_factors_into(mapped, out);
        if self.uses_dose() {
            for (slot, part) in out.iter_mut().zip(&self.dose) {
                let g = match *part {
                    DosePart::One => T::one(),
                    DosePart::Power(1) => d,
                    DosePart::Power(p) => d.powi(p),
                    DosePart::Spline(k) => self
                        .dose_spline
                        .as_ref()
                        .expect("fitted spline")
                        .basis_value(d, k),
                };
                *slot *= g;
            }
        }
    }

    /// Design matrix for the listed units.
    pub fn design(&self, rows: &[&[T]], doses: Option<&[T]>) -> Matrix<T> {
        let k = self.dim();
        let mut data = vec![T::zero(); rows.len() * k];
        let mut mapped = Vec::new();
        for (i, x) in rows.iter().enumerate() {
            let d = doses.map_or(T::zero(), |d| d[i]);
            self.row_into(d, x, &mut mapped, &mut data[i * k..(i + 1) * k]);
        }
        Matrix::from_row_major(rows.len(), k, data).expect("consistent design shape")
    }
}
