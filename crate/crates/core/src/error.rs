use thiserror::Error;

/// Errors raised across the fitting and inference pipeline.
///
/// Variants are grouped so that front-ends can map them onto a small set of
/// exit codes: configuration problems, data problems and numerical failures.
#[derive(Debug, Error)]
pub enum ShelError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value in {field} at row {row}")]
    NonFinite { field: &'static str, row: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("no within-cluster degrees of freedom (all clusters are singletons)")]
    NoWithinDf,

    #[error("complete separation detected in {0}")]
    Separation(String),

    #[error("singular system in {0}")]
    Singular(String),

    #[error("selection event inconsistent with observed response: max violation {violation:.3e}")]
    InconsistentEvent { violation: f64 },

    #[error("empty truncation interval: L = {lower}, U = {upper}")]
    EmptyTruncation { lower: f64, upper: f64 },

    #[error("nodewise residual variance {0:.3e} below threshold (near-exact collinearity)")]
    Collinear(f64),

    #[error("exhaustive search over {p0} columns exceeds the limit of {limit}; use greedy mode")]
    TooManyColumns { p0: usize, limit: usize },

    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: String, detail: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ShelError {
    pub fn numerical(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        ShelError::Numerical {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by the input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ShelError::EmptyDataset
                | ShelError::NonFinite { .. }
                | ShelError::Dimension(_)
                | ShelError::Data(_)
                | ShelError::MissingColumn(_)
                | ShelError::NoWithinDf
                | ShelError::Csv(_)
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, ShelError::Config(_) | ShelError::TooManyColumns { .. })
    }
}

pub type Result<T> = std::result::Result<T, ShelError>;
