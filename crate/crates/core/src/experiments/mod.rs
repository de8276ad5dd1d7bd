//! Endpoint evaluation, the ablation protocol and the parameter-matched baseline.

mod ablation;
mod baseline;
mod endpoint;

pub use ablation::{
    build_ablation, run_ablation, AblationRun, AblationSet, AblationSpec, Arm, ArmFailure, ExperimentError,
    ResultRow, ResultsTable,
};
pub use baseline::{build_baseline, full_parameter_count, BUDGET_TOLERANCE};
pub use endpoint::{evaluate_endpoint, median, EndpointEval};
