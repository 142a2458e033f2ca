use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// Two sensors too close for a well-defined TDOA row.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Evaluation point on top of a sensor; the range gradient is undefined.
    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// A message needed by the delayed consensus step never arrived.
    #[error(
        "protocol violation: node {node} missing message from {sender} sent at step {send_step}"
    )]
    ProtocolViolation {
        node: usize,
        sender: usize,
        send_step: i64,
    },

    #[error("gain design failed to stabilize: best spectral radius {best_radius:.6}")]
    DesignFailure { best_radius: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("failed to parse scenario: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
