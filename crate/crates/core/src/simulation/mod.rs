//! Monte-Carlo simulation harness: data-generating processes, ground truth
//! and the scenario runner.

pub mod dgp;
pub mod study;
pub mod truth;

pub use crate::nuisance::kang_schafer_map;
pub use dgp::{Dgp, Effect, PanelDgp};
pub use study::{
    all_permutations, method_report, mr_robustness, permutation_label, run_custom_study,
    run_permutation_study, run_study, scenario_specs, InferenceSettings, IntervalMetrics,
    MethodReport, Misspecification, ReplicateOutcome, Robustness, ScenarioConfig, ScenarioReport,
};
pub use truth::{ground_truth_curve, ground_truth_with_points, super_population, GroundTruth};
