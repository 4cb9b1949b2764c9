use thiserror::Error;

/// Errors produced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Variable sets, dimensions or axes do not line up.
    #[error("layout error: {0}")]
    Layout(String),

    /// A matrix that must be positive definite is not, or a value is non-finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A log-likelihood evaluated to a non-finite value or exceeded its declared bound.
    #[error("bounded-gradient violation: {0}")]
    BoundedGradient(String),

    /// Geometric pooling hit a zero-mass cell with positive weight.
    #[error("log-domain underflow: {0}")]
    Underflow(String),

    /// A graph or restricted subgraph is not connected.
    #[error("connectivity error: {0}")]
    Connectivity(String),

    /// The agents estimating a variable do not induce a connected subgraph.
    #[error("assignment error: agents holding variable {variable} are not connected")]
    Assignment { variable: String },

    /// Sinkhorn balancing failed to reach tolerance.
    #[error("sinkhorn did not converge after {iterations} sweeps (residual {residual:e})")]
    Sinkhorn { iterations: usize, residual: f64 },

    /// A neighbor message was missing or malformed.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A variational update produced a non positive-definite information matrix.
    #[error("curvature error: {0}")]
    Curvature(String),

    /// An input broke a documented structural contract (e.g. non-diagonal input).
    #[error("contract error: {0}")]
    Contract(String),

    /// A BP message became degenerate after excluding the recipient's message.
    #[error("message degeneracy from agent {from} to agent {to}: {reason}")]
    MessageDegeneracy { from: usize, to: usize, reason: String },

    /// A kernel center is owned by no agent.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// Configuration failed validation; `path` names the offending field.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A step failed inside the round engine.
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    /// A run of an experiment failed.
    #[error("run `{run}`: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn layout(msg: impl Into<String>) -> Self {
        Error::Layout(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    /// Innermost error, skipping `Round` and `Run` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Round { source, .. } | Error::Run { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
