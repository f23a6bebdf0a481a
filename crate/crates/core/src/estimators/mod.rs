//! Marginal LASSO, SHEL and GSHEL fits, cluster-level cross-validation, the
//! iterative refits, and the sparse target-shift oracle.

mod cv;
mod iterative;
mod target_shift;

pub use cv::{cross_validate, fold_assignment, CvConfig, CvResult, LambdaRule};
pub use iterative::{fit_ishel, IshelConfig, IterativeFit, IterativeTrace};
pub use target_shift::{target_shift_greedy, target_shift_oracle, TargetShift, EXHAUSTIVE_LIMIT};

use nalgebra::DMatrix;

use crate::data::{ClusteredDataset, Family};
use crate::design::{coupling_ratio, StackedDesign, SyntheticDesign};
use crate::error::{Result, ShelError};
use crate::scalar::Scalar;
use crate::solver::{fit, PenalizedFit, SolverConfig};

/// Stacked design `[X B]` with the coupled penalty ratio `√(log p₀ / log p)`.
pub fn shel_design<T: Scalar>(x: &DMatrix<T>, synthetic: &SyntheticDesign<T>) -> Result<StackedDesign<T>> {
    let ratio = T::lit(coupling_ratio(x.ncols(), synthetic.p0()));
    StackedDesign::new(x, &synthetic.b, ratio)
}

/// LASSO on `X` alone, ignoring cluster structure.
pub fn fit_marginal<T: Scalar>(
    data: &ClusteredDataset<T>,
    lambda1: T,
    config: &SolverConfig<T>,
) -> Result<PenalizedFit<T>> {
    let empty = SyntheticDesign::empty(data.n_obs(), 0.0);
    let design = shel_design(data.x(), &empty)?;
    fit(&design, data.y(), data.family(), lambda1, config)
}

/// Linear SHEL: squared-error loss on `[X B]` with weights 1 for `β` and the
/// coupled ratio for `γ`.
pub fn fit_shel<T: Scalar>(
    data: &ClusteredDataset<T>,
    synthetic: &SyntheticDesign<T>,
    lambda1: T,
    config: &SolverConfig<T>,
) -> Result<PenalizedFit<T>> {
    if data.family() != Family::Gaussian {
        return Err(ShelError::Config("SHEL needs a Gaussian response; use GSHEL".into()));
    }
    let design = shel_design(data.x(), synthetic)?;
    fit(&design, data.y(), Family::Gaussian, lambda1, config)
}

/// Generalized SHEL for a binary response: logistic loss on the same design.
pub fn fit_gshel<T: Scalar>(
    data: &ClusteredDataset<T>,
    synthetic: &SyntheticDesign<T>,
    lambda1: T,
    config: &SolverConfig<T>,
) -> Result<PenalizedFit<T>> {
    if data.family() != Family::Binomial {
        return Err(ShelError::Config("GSHEL needs a binary response; use SHEL".into()));
    }
    let design = shel_design(data.x(), synthetic)?;
    fit(&design, data.y(), Family::Binomial, lambda1, config)
}
