use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not Hermitian: defect {defect:e} exceeds tolerance {tol:e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("outcome '{label}' has probability {probability:e} at or below the zero-probability threshold")]
    ZeroProbabilityOutcome { label: String, probability: f64 },

    #[error("unknown outcome label '{0}'")]
    UnknownOutcome(String),

    #[error("retrodiction normalizer {value:e} is numerically zero: record impossible under the model")]
    ZeroNormalizer { value: f64 },

    #[error("record has zero probability under the discrete model")]
    ZeroProbabilityRecord,

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("positivity lost at step {step}: minimum eigenvalue {min_eigenvalue:e}")]
    PositivityLost { step: usize, min_eigenvalue: f64 },

    #[error("unnormalized state trace became non-positive ({trace:e}) at step {step}")]
    NonPositiveTrace { step: usize, trace: f64 },

    #[error("grid misalignment: {0}")]
    GridMisalignment(String),

    #[error("global dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("invalid specification: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("missing outcome for intervention {index}")]
    MissingOutcome { index: usize },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotHermitian { .. } => "not_hermitian",
            Error::ZeroProbabilityOutcome { .. } => "zero_probability_outcome",
            Error::UnknownOutcome(_) => "unknown_outcome",
            Error::ZeroNormalizer { .. } => "zero_normalizer",
            Error::ZeroProbabilityRecord => "zero_probability_record",
            Error::NonFinite { .. } => "non_finite",
            Error::PositivityLost { .. } => "positivity_lost",
            Error::NonPositiveTrace { .. } => "non_positive_trace",
            Error::GridMisalignment(_) => "grid_misalignment",
            Error::DimensionCap { .. } => "dimension_cap",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::MissingOutcome { .. } => "missing_outcome",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
