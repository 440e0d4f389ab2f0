//! Pointwise confidence bands for the effect curve.

pub mod bootstrap;
pub mod sandwich;

pub use bootstrap::{
    bootstrap_weights, percentile_bands, run_replicates, weighted_bootstrap, BootstrapConfig,
    BootstrapResult, WeightStream,
};
pub use sandwich::{
    equation_system, sandwich_bands, sandwich_from_parts, stacked_sandwich, EquationSystem,
    SandwichBands, SandwichMode, Z_975,
};
