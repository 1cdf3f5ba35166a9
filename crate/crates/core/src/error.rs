use thiserror::Error;

/// Errors raised across the estimation pipeline.
///
/// Column indices carried by variants are zero-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QivError {
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("selected index set is empty")]
    EmptySelection,
    #[error("selected index set covers every column, leaving no removed predictors")]
    FullSelection,
    #[error("index {index} out of bounds for {len} columns")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("linear program did not converge within {0} iterations")]
    SolverDidNotConverge(usize),
    #[error("Schur complement of the chosen removed predictors is not positive definite (min eigenvalue {0:e})")]
    DegenerateSchurComplement(f64),
    #[error("cross-Gram estimate carries no instrument information")]
    ZeroMatrix,
    #[error("regularized Gram matrix is singular")]
    DegenerateGram,
    #[error("residualized design Gram matrix is singular (min eigenvalue {0:e})")]
    SingularResidualGram(f64),
    #[error("every bandwidth in the grid yields a degenerate smoother")]
    AllBandwidthsDegenerate,
    #[error("new observations lack removed-predictor columns required by the instrument plan")]
    MissingUStarColumns,
    #[error("working-model design matrix is singular")]
    SingularDesign,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("incompatible dimensions: {0}")]
    IncompatibleDimensions(String),
    #[error("coefficient vector carries zero signal")]
    ZeroSignal,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl QivError {
    /// True for failures of the numerical procedures themselves, as opposed
    /// to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            QivError::SolverDidNotConverge(_)
                | QivError::DegenerateSchurComplement(_)
                | QivError::ZeroMatrix
                | QivError::DegenerateGram
                | QivError::SingularResidualGram(_)
                | QivError::AllBandwidthsDegenerate
                | QivError::SingularDesign
                | QivError::ZeroSignal
                | QivError::TooManyFailures { .. }
        )
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            QivError::ZeroVarianceColumn(_) => "ZeroVarianceColumn",
            QivError::EmptySelection => "EmptySelection",
            QivError::FullSelection => "FullSelection",
            QivError::IndexOutOfBounds { .. } => "IndexOutOfBounds",
            QivError::SolverDidNotConverge(_) => "SolverDidNotConverge",
            QivError::DegenerateSchurComplement(_) => "DegenerateSchurComplement",
            QivError::ZeroMatrix => "ZeroMatrix",
            QivError::DegenerateGram => "DegenerateGram",
            QivError::SingularResidualGram(_) => "SingularResidualGram",
            QivError::AllBandwidthsDegenerate => "AllBandwidthsDegenerate",
            QivError::MissingUStarColumns => "MissingUStarColumns",
            QivError::SingularDesign => "SingularDesign",
            QivError::LengthMismatch { .. } => "LengthMismatch",
            QivError::IncompatibleDimensions(_) => "IncompatibleDimensions",
            QivError::ZeroSignal => "ZeroSignal",
            QivError::InvalidInput(_) => "InvalidInput",
            QivError::TooManyFailures { .. } => "TooManyFailures",
        }
    }
}

pub type Result<T> = std::result::Result<T, QivError>;
