use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate world: {0}")]
    DegenerateWorld(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("ragged rows: row {row} has {found} values, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },
    #[error("statistics need at least two classes")]
    SingleClass,
    #[error("intra-class variance is zero; variance ratio undefined")]
    DegenerateIntraClassVariance,
    #[error("total variance is zero")]
    ZeroTotalVariance,

    #[error("need {needed} classes, source has {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {label:?} has {available} samples, episode needs {needed}")]
    InsufficientSamplesPerClass {
        label: String,
        needed: usize,
        available: usize,
    },

    #[error("requested dimension {requested} exceeds input dimension {available}")]
    DimensionTooLarge { requested: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("transform projection columns are not orthonormal (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("bound denominator is zero (all moments vanish)")]
    DegenerateDenominator,
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
