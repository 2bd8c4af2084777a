use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value cannot be represented in the fixed-point range [-128, 128).
    #[error("element {index} = {value} exceeds the quantizable range [-128, 128)")]
    RangeExceeded { index: usize, value: f32 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The same bit of the same element received both stuck-at-0 and stuck-at-1.
    #[error("conflicting stuck-at faults on {0}")]
    ConflictingStuckAt(String),

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("model already has an armed injection handler")]
    DoubleArm,

    #[error("injection handler is not armed")]
    NotArmed,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("layer {0} is not differentiable")]
    NonDifferentiableLayer(String),

    #[error("invalid injection: {0}")]
    InvalidInjection(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Configuration errors; the CLI maps these to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    #[error("store schema is v{found}, this build expects v{expected}")]
    SchemaVersionMismatch { found: i64, expected: i64 },

    #[error("foreign key violation: {0}")]
    ForeignKeyViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("sql error: {0}")]
    Sql(String),

    #[error("model file error: {0}")]
    ModelFile(String),
}

impl From<rusqlite::Error> for Error {
    fn from(e: rusqlite::Error) -> Self {
        if let rusqlite::Error::SqliteFailure(code, ref msg) = e {
            let fk = code.code == rusqlite::ErrorCode::ConstraintViolation
                && msg.as_deref().is_some_and(|m| m.contains("FOREIGN KEY"));
            if fk {
                return Error::ForeignKeyViolation(msg.clone().unwrap_or_default());
            }
        }
        Error::Sql(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
