use thiserror::Error;

/// Errors raised anywhere in the modeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time {t} outside path span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },

    #[error("integration diverged at substep {substep} (t = {t})")]
    Divergence { substep: usize, t: f64 },

    #[error("non-finite gradient in group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("training diverged at epoch {epoch}, waveform `{waveform}`: {source}")]
    TrainingDiverged {
        epoch: usize,
        waveform: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("semantic error: {0}")]
    Semantic(String),

    #[error("fixed-point iteration did not converge at step {step} (t = {t})")]
    NonConvergent { step: usize, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => true,
            Error::TrainingDiverged { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
