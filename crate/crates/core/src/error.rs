use thiserror::Error;

pub type Result<T> = std::result::Result<T, LatteError>;

#[derive(Debug, Error)]
pub enum LatteError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {op} received invalid input {value} at index {index}")]
    Domain { op: &'static str, index: usize, value: f64 },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("undefined metric for series '{series}': {reason}")]
    UndefinedMetric { series: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LatteError {
    pub fn dim(msg: impl Into<String>) -> Self {
        LatteError::Dimension(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        LatteError::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        LatteError::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        LatteError::Config(msg.into())
    }

    /// Short machine-readable tag, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            LatteError::Dimension(_) => "dimension",
            LatteError::Domain { .. } => "domain",
            LatteError::Contract(_) => "contract",
            LatteError::Numeric(_) => "numeric",
            LatteError::Parse { .. } => "parse",
            LatteError::Config(_) => "config",
            LatteError::UndefinedMetric { .. } => "undefined_metric",
            LatteError::Io(_) => "io",
            LatteError::Json(_) => "json",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LatteError::Config(_) | LatteError::Json(_) | LatteError::Dimension(_) | LatteError::Contract(_) => 2,
            LatteError::Parse { .. } | LatteError::Io(_) | LatteError::UndefinedMetric { .. } => 3,
            LatteError::Numeric(_) | LatteError::Domain { .. } => 4,
        }
    }
}
