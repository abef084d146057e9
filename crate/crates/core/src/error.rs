use thiserror::Error;

pub type Result<T> = std::result::Result<T, ShapleyError>;

#[derive(Debug, Error)]
pub enum ShapleyError {
    /// The player count exceeds what the requested mode can handle.
    #[error("{players} players exceed the supported maximum of {max}")]
    Capacity { players: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed game: {0}")]
    MalformedGame(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    /// The noise model does not declare the analytic moments an operation needs.
    #[error("unsupported analytics: {0}")]
    UnsupportedAnalytics(String),

    /// A value-function callback or custom noise sampler failed.
    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("least-squares design matrix is rank deficient")]
    SingularFit,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl ShapleyError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        ShapleyError::Domain(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        ShapleyError::MalformedGame(msg.into())
    }
}
