use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group order {0}")]
    InvalidOrder(usize),
    #[error("group order {order} exceeds the configured maximum {max}")]
    GroupTooLarge { order: usize, max: usize },
    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),
    #[error("cannot parse group descriptor {0:?}")]
    BadDescriptor(String),
    #[error("representations are defined over different groups")]
    GroupMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),
    #[error("isotypic decomposition failed (residual {residual:e})")]
    DecompositionFailure { residual: f64 },
    #[error("block index {index} out of range ({count} blocks)")]
    BlockIndex { index: usize, count: usize },
    #[error("subspace basis is rank deficient")]
    DegenerateSubspace,
    #[error("representation is not aligned with the isotypic layout (residual {residual:e})")]
    Alignment { residual: f64 },
    #[error("basis fingerprint mismatch: file has {found}, layout gives {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("invariant check failed on load: {0}")]
    InvariantViolation(String),
    #[error("singular normal matrix with zero ridge; use a ridge parameter > 0")]
    RankDeficient,
    #[error("non-finite value at prediction horizon {horizon}")]
    NumericOverflow { horizon: usize },
    #[error("training diverged at step {at}")]
    TrainingDivergence {
        at: usize,
        /// Parameters of the last checkpoint whose loss was finite.
        last_finite: Option<Vec<f64>>,
    },
    #[error("cache was produced by a different parameter snapshot")]
    StaleCache,
    #[error("could not generate a nilpotent-free equivariant matrix after {0} attempts")]
    Nilpotent(usize),
    #[error("constraint projection did not converge")]
    Infeasible,
    #[error("no feasible initial state found in {0} draws")]
    InfeasibleBox(usize),
    #[error("eigensolver did not converge (condition estimate {condition:e})")]
    Eigensolver { condition: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerics rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DecompositionFailure { .. }
                | Error::Alignment { .. }
                | Error::RankDeficient
                | Error::NumericOverflow { .. }
                | Error::TrainingDivergence { .. }
                | Error::Nilpotent(_)
                | Error::Infeasible
                | Error::InfeasibleBox(_)
                | Error::Eigensolver { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
