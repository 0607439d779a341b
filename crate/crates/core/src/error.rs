use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum LeeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A kernel window carried no mass.
    #[error("empty local window at d = {d} (h = {h}): {what}")]
    EmptyWindow { d: f64, h: f64, what: &'static str },

    #[error("overlap violation: {0}")]
    Overlap(String),

    #[error("solver did not converge after {iterations} iterations (final gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("at grid index {index}: {source}")]
    AtGridPoint {
        index: usize,
        #[source]
        source: Box<LeeError>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LeeError {
    pub(crate) fn at_grid(index: usize) -> impl FnOnce(LeeError) -> LeeError {
        move |e| match e {
            e @ LeeError::AtGridPoint { .. } => e,
            e => LeeError::AtGridPoint {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Stable machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            LeeError::Io { .. } => "io",
            LeeError::Parse { .. } => "parse",
            LeeError::Validation(_) => "validation",
            LeeError::UnknownColumn(_) => "unknown_column",
            LeeError::Argument(_) => "argument",
            LeeError::EmptyWindow { .. } => "empty_window",
            LeeError::Overlap(_) => "overlap",
            LeeError::Convergence { .. } => "convergence",
            LeeError::Inference(_) => "inference",
            LeeError::AtGridPoint { source, .. } => source.kind(),
            LeeError::Json(_) => "json",
            LeeError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, LeeError>;
