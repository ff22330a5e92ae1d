use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperparameter(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("invalid config at layer {index}: {reason}")]
    InvalidConfig { index: usize, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unmappable character {ch:?} at offset {offset}")]
    UnmappableCharacter { ch: char, offset: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Ppm(#[from] crate::vision::PpmError),
    #[error(transparent)]
    Weights(#[from] crate::network::WeightsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short identifier, used for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid-shape",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::InvalidGeometry(_) => "invalid-geometry",
            Error::InvalidHyperparameter(_) => "invalid-hyperparameter",
            Error::InvalidLabel { .. } => "invalid-label",
            Error::InvalidAnnotation(_) => "invalid-annotation",
            Error::InvalidConfig { .. } => "invalid-config",
            Error::InvalidInput(_) => "invalid-input",
            Error::Parse { .. } => "parse",
            Error::UnmappableCharacter { .. } => "unmappable-character",
            Error::NonFinite(_) => "non-finite",
            Error::Ppm(_) => "decode",
            Error::Weights(_) => "weights",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
