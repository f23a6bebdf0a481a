//! Simulation designs, performance measures and the replicated study driver.

mod dgp;
mod metrics;
mod study;

pub use dgp::{
    covariance_block, generate, Dependence, DgpConfig, InterceptDist, Truth, BLOCK, PRECISION_DIAG, PRECISION_OFF,
};
pub use metrics::{classification, median, score_estimation, score_inference, score_selection, TestOutcome};
pub use study::{
    run_study, Failure, Grid, MethodSummary, MetricsRow, Method, Scenario, StudyConfig, StudyResult, Summary,
    METRIC_NAMES,
};
