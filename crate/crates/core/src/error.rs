use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration or input failed validation. Each entry names the offending field.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("patient {patient_id} has conflicting labels across samples")]
    ConflictingLabels { patient_id: String },

    #[error("feature '{0}' has no observed values to fit from")]
    UnfittableFeature(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceOverflow { len: usize, max: usize },

    #[error("invalid model input: {0}")]
    InvalidInput(String),

    #[error("cannot parse model output {0:?}")]
    UnrecognizedOutput(String),

    #[error("'mild and death' violates the label constraint")]
    ConstraintViolation,

    #[error("missing artifact {path} (run stage '{stage}' first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("artifact format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }
}
