//! Scenario files, reference presets, multi-seed comparisons and the
//! CSV/JSON artifacts they produce.

pub mod config;
pub mod convergence;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::{Instance, InstanceSpec, PolicyKind, PolicySpec, ScenarioConfig};
pub use convergence::{convergence_metrics, ConvergenceSummary, DecileConvergence};
pub use presets::{preset, preset_names, preset_source};
pub use runner::{
    prepare_policy, run_scenario, static_profile, write_run_artifacts, Aggregate, ClassRow, ComparisonReport,
    PolicyReport, PreparedPolicy, RunOptions, RunReport,
};
