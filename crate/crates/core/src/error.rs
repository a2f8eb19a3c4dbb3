use thiserror::Error;

/// Errors produced anywhere in the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced at {0}")]
    NonFiniteValue(String),
    #[error("requested {requested} specs but the space only holds {available}")]
    SpaceExhausted { requested: usize, available: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("label {label} out of range in record {record}")]
    LabelOutOfRange { label: u8, record: usize },
    #[error("need {requested} images but only {available} are available")]
    NotEnoughImages { requested: usize, available: usize },
    #[error("invalid gamma {0}: must be positive and finite")]
    InvalidGamma(f64),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all rows are identical")]
    AllRowsIdentical,
    #[error("series is constant")]
    ConstantSeries,
    #[error("all pairs are tied")]
    AllTied,
    #[error("every score is degenerate")]
    AllDegenerate,
    #[error("spec_id {0} missing from the reference table")]
    JoinMiss(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    AllDegenerate,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SpaceExhausted { .. }
            | Error::InvalidSpec(_)
            | Error::InvalidGamma(_)
            | Error::Config(_)
            | Error::JoinMiss(_) => ErrorClass::Config,
            Error::MalformedFile { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NotEnoughImages { .. }
            | Error::Io { .. }
            | Error::Csv(_) => ErrorClass::Data,
            Error::AllDegenerate => ErrorClass::AllDegenerate,
            _ => ErrorClass::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
