use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The queried state has zero probability under the forward marginal.
    #[error("singular state {0:?}: unreachable under the forward process")]
    SingularState(Vec<usize>),

    #[error("degenerate transition row at position {position}")]
    DegenerateStep { position: usize },

    #[error("training diverged at step {step}: parameter {value} left its admissible range")]
    Divergence { step: usize, value: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
