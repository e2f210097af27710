use thiserror::Error;

/// Errors raised by data ingestion, estimation and tuning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("transform `{term}` produced a non-finite value at row {row}")]
    NonFiniteTransform { term: String, row: usize },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("treatment must be coded 0/1 (found {0})")]
    InvalidTreatment(String),

    #[error("treatment is constant; no contrast can be estimated")]
    ConstantTreatment,

    #[error("weights must be nonnegative with a positive sum")]
    InvalidWeights,

    #[error("no penalized main effect: lambda_max is undefined")]
    NoPenalizedTerms,

    #[error("design is numerically rank deficient")]
    RankDeficient,

    #[error("non-finite objective encountered (unscaled or degenerate data?)")]
    NonFiniteObjective,

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("expression parse error in `{expr}`: {msg}")]
    Expression { expr: String, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by the command-line front end for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Expression { .. }
            | Error::MissingValue { .. }
            | Error::Io(_) => ErrorKind::Parse,
            Error::NonFiniteTransform { .. }
            | Error::RankDeficient
            | Error::NonFiniteObjective
            | Error::ConstantTreatment => ErrorKind::Numeric,
            Error::UnknownColumn(_)
            | Error::DuplicateColumn(_)
            | Error::Shape(_)
            | Error::InvalidTreatment(_)
            | Error::InvalidWeights
            | Error::NoPenalizedTerms
            | Error::Config(_) => ErrorKind::Config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Numeric,
    Config,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
