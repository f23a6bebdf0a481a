//! Post-selection inference for the linear model.

pub mod debias;
pub mod normal;
pub mod selective;

pub use normal::{norm_cdf, normal_quantile, truncated_normal_cdf, upper_tail, TruncatedCdf};
pub use selective::{
    build_polyhedron, estimate_covariance, selective_inference, selective_test, truncation_limits, CovarianceKind,
    CovarianceModel, SelectionEvent, SelectiveCI, SelectiveReport,
};
pub use debias::{
    cluster_variance, debias, debiased_test_suite, nodewise_fit, working_variance, DebiasReport, DebiasRow, NodewiseConfig,
    NodewiseFit, NodewisePenalty,
};
