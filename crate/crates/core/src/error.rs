use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("insufficient sample: need at least {needed} points, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("degenerate design: dimension {dim} has zero spread")]
    DegenerateDesign { dim: usize },

    #[error("degenerate density: all {n} design-point densities fell below the floor {floor:e}")]
    DegenerateDensity { n: usize, floor: f64 },

    #[error("no design points inside the integration domain")]
    EmptyNumerator,

    #[error("unsupported chain: {0}")]
    UnsupportedChain(String),

    #[error("insufficient blocks: need at least {needed}, got {got}")]
    InsufficientBlocks { needed: usize, got: usize },

    #[error("insufficient data for {cell}: {got} records, need {needed}")]
    InsufficientData {
        cell: String,
        got: usize,
        needed: usize,
    },

    #[error("malformed input at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by
    /// malformed input (all weights clamped, empty numerator, too few blocks).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDensity { .. }
                | Error::EmptyNumerator
                | Error::DegenerateDesign { .. }
                | Error::InsufficientBlocks { .. }
        )
    }
}
