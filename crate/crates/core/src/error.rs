use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// Every variant maps to a stable, single-word category (see [`Error::category`])
/// so that command-line front ends can emit machine-parseable failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not applicable: {0}")]
    Applicability(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("fingerprint mismatch: model built for {model}, schema is {schema}")]
    Fingerprint { model: String, schema: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Applicability(_) => "applicability",
            Error::Generation(_) => "generation",
            Error::Format(_) | Error::Json(_) => "format",
            Error::Version { .. } => "version",
            Error::Fingerprint { .. } => "fingerprint",
            Error::Shape { .. } => "shape",
            Error::Numeric(_) => "numeric",
            Error::UndefinedRatio(_) => "undefined-ratio",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
