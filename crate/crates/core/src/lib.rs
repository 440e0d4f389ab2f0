//! Dose-response curves for two-period difference-in-differences designs
//! with a continuous exposure among treated units.
//!
//! The main estimator is multiply robust: it combines a treatment
//! propensity, a conditional dose density and two outcome-trend regressions
//! so that the average dose effect on the treated stays consistent when only
//! some of them are correctly specified. Outcome-regression, inverse
//! probability weighting, naive and two-way fixed effects estimators are
//! provided for comparison, along with sandwich and bootstrap bands, a
//! simulation harness and the repeated-period panel workflow.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod curves;
pub mod data;
pub mod error;
pub mod inference;
pub mod nuisance;
pub mod numeric;
pub mod panel;
pub mod pseudo;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use curves::{estimate_curve, estimate_curve_weighted, Method};
pub use error::{Error, Result};
pub use scalar::Real;

pub type PanelDataset = data::PanelDataset<f64>;
pub type TwoPeriodDataset = data::TwoPeriodDataset<f64>;
pub type UnitRecord = data::UnitRecord<f64>;
pub type EffectCurveEstimate = curves::EffectCurveEstimate<f64>;
pub type EstimatorConfig = curves::EstimatorConfig<f64>;
pub type GridSpec = curves::GridSpec<f64>;
pub type NuisanceModelSet = nuisance::NuisanceModelSet<f64>;
pub type SandwichBands = inference::SandwichBands<f64>;
pub type BootstrapResult = inference::BootstrapResult<f64>;
pub type RepeatedEstimate = panel::RepeatedEstimate<f64>;
