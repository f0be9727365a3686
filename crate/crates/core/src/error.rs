use thiserror::Error;

pub type Result<T> = std::result::Result<T, KdaError>;

#[derive(Debug, Error)]
pub enum KdaError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("class {label} has no examples")]
    EmptyClass { label: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at {location}: {detail}")]
    Format { location: String, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KdaError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        KdaError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(location: impl Into<String>, detail: impl Into<String>) -> Self {
        KdaError::Format {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
