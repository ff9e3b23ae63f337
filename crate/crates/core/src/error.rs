use thiserror::Error;

/// Errors raised by the assimilation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("block Cholesky factorization failed at block {block}")]
    FactorizationFailed { block: usize },

    #[error("non-finite state produced at step {step}")]
    NonFinite { step: usize },

    #[error("Newton shadowing diverged at iteration {iteration} (|G| grew for 3 consecutive iterations)")]
    Diverged { iteration: usize },

    #[error("Levenberg-Marquardt damping overflow at iteration {iteration}: no cost decrease found (damping {damping:e})")]
    DampingOverflow { iteration: usize, damping: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown model '{name}'; registered models: {registered}")]
    UnknownModel { name: String, registered: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that originate in a numerical solver rather than in the inputs.
    pub fn is_solver_error(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::FactorizationFailed { .. }
                | Error::NonFinite { .. }
                | Error::Diverged { .. }
                | Error::DampingOverflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
