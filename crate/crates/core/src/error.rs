use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate window{}: {reason}", .window.map(|w| format!(" {w}")).unwrap_or_default())]
    DegenerateWindow {
        window: Option<usize>,
        reason: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite loss at epoch {epoch}; best weights restored")]
    NonFiniteLoss { epoch: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn degenerate(reason: impl Into<String>) -> Self {
        Error::DegenerateWindow {
            window: None,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Attach a window index to a degenerate-window error.
    pub fn at_window(self, index: usize) -> Self {
        match self {
            Error::DegenerateWindow { reason, .. } => Error::DegenerateWindow {
                window: Some(index),
                reason,
            },
            other => other,
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateWindow { .. } | Error::NonFiniteLoss { .. } | Error::Singular(_)
        )
    }
}
