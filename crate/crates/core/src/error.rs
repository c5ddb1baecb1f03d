use thiserror::Error;

/// Errors produced by the optimizers, models, environments and trainers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity reached a place that must only see finite values.
    #[error("poisoned gradient: {context}")]
    PoisonedGradient { context: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn poisoned(context: impl Into<String>) -> Self {
        Error::PoisonedGradient {
            context: context.into(),
        }
    }

    /// Prefixes the message with where it happened, e.g. `"ppo seed 3, update 17"`.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{ctx}: {m}")),
            Error::PoisonedGradient { context } => Error::PoisonedGradient {
                context: format!("{ctx}: {context}"),
            },
            Error::InsufficientData(m) => Error::InsufficientData(format!("{ctx}: {m}")),
            Error::Parse(m) => Error::Parse(format!("{ctx}: {m}")),
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::PoisonedGradient { .. } => "poisoned-gradient",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Parse(_) => "parse",
        }
    }
}
