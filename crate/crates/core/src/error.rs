use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// No allocation satisfies the constraints. `device` is the binding device.
    #[error("infeasible allocation for device {device}: {reason}")]
    Infeasible { device: usize, reason: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Shifts a cluster-local device index to a global one.
    pub fn offset_device(self, offset: usize) -> Self {
        match self {
            Error::Infeasible { device, reason } => Error::Infeasible { device: device + offset, reason },
            other => other,
        }
    }
}
