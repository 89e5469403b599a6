use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoomError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss in {stage}: {value}")]
    NonFiniteLoss { stage: &'static str, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BoomError>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(BoomError::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}
