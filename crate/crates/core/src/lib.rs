//! Synthetic heterogeneous-effects LASSO for high-dimensional clustered data.
//!
//! The data containers, the stacked design and the penalized solvers are generic
//! over [`scalar::Scalar`]; the aliases below fix the scalar to `f64`, which is
//! what screening, inference and the simulation harness work in.

pub mod data;
pub mod design;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod mixed;
pub mod scalar;
pub mod screening;
pub mod sim;
pub mod solver;

pub use error::{Result, ShelError};
pub use scalar::Scalar;

pub type Dataset = data::ClusteredDataset<f64>;
pub type Synthetic = design::SyntheticDesign<f64>;
pub type Design = design::StackedDesign<f64>;
pub type Fit = solver::PenalizedFit<f64>;
pub type Solver = solver::SolverConfig<f64>;
