use thiserror::Error;

/// Errors raised by grid, simulation and filter contracts.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid spec: {0}")]
    InvalidGridSpec(String),

    #[error("mass constraint violated at cell ({row}, {col}): m_occ={m_occ} + m_free={m_free} > 1")]
    MassConstraint {
        row: usize,
        col: usize,
        m_occ: f64,
        m_free: f64,
    },

    #[error("probability {value} outside open interval (0, 1)")]
    ProbabilityRange { value: f64 },

    #[error("grid spec mismatch: {0}")]
    GridSpecMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown agent id: {0}")]
    UnknownAgent(String),

    #[error("history window too short: got {got}, need {need}")]
    WindowTooShort { got: usize, need: usize },

    #[error("no valid frames to aggregate: {0}")]
    NoValidFrames(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the data contract (as opposed to plain i/o).
    pub fn is_contract(&self) -> bool {
        !matches!(self, CoreError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
