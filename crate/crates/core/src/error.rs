use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A failure inside the message-passing loop, tagged with the stage of the
    /// sweep (1–4: likelihood denoiser, LMMSE toward `x`, prior denoiser,
    /// LMMSE toward `z`) where it surfaced.
    #[error("numeric failure at step {step} of the KVASP sweep: {detail}")]
    Sweep { step: u32, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Re-tag a numeric error with a step of the sweep.
    pub(crate) fn at_step(self, step: u32) -> Self {
        match self {
            Error::Sweep { .. } => self,
            other => Error::Sweep {
                step,
                detail: other.to_string(),
            },
        }
    }
}
