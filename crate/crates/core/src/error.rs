use hkd_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HkdError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what} width mismatch: teacher {teacher}, student {student}")]
    WidthMismatch {
        what: &'static str,
        teacher: usize,
        student: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, step {step}: {msg}")]
    Diverged { epoch: usize, step: usize, msg: String },
    #[error("teacher checkpoint required for variant {0}")]
    MissingTeacher(String),
    #[error("gradient check failed for {case}: relative error {error:e}")]
    GradientCheck { case: String, error: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HkdError>;

impl HkdError {
    /// Short stable identifier of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            HkdError::Autodiff(_) => "autodiff",
            HkdError::Config(_) => "config",
            HkdError::WidthMismatch { .. } => "width-mismatch",
            HkdError::Input(_) => "input",
            HkdError::Corpus { .. } => "corpus",
            HkdError::UnknownLabel(_) => "unknown-label",
            HkdError::Checkpoint(_) => "checkpoint",
            HkdError::NonFiniteGradient(_) => "non-finite-gradient",
            HkdError::Diverged { .. } => "diverged",
            HkdError::MissingTeacher(_) => "missing-teacher",
            HkdError::GradientCheck { .. } => "gradcheck",
            HkdError::Io(_) => "io",
            HkdError::Json(_) => "json",
        }
    }
}
