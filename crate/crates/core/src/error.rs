use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RdmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RdmError {
    /// A caller broke an operation's precondition (shapes, ranges, dims).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error in {file} at byte {offset}: {reason}")]
    Format {
        file: String,
        offset: u64,
        reason: String,
    },

    #[error("checksum mismatch for {file}: expected {expected}, found {found}")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },

    #[error("database is empty")]
    EmptyDatabase,

    /// Every retrieved neighbor was excluded as a self-match.
    #[error("degenerate database: no neighbors left after excluding self-matches")]
    DegenerateDatabase,

    #[error("build error: {0}")]
    Build(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure in {op}")]
    Numeric { op: String },

    #[error("numeric failure during sampling at timestep {timestep}")]
    SamplingDiverged { timestep: usize },

    #[error("training diverged at step {step}")]
    Diverged {
        step: u64,
        last_good: Box<crate::pipeline::Checkpoint>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RdmError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        RdmError::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RdmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            RdmError::Contract(_) => ErrorKind::Usage,
            RdmError::Numeric { .. }
            | RdmError::SamplingDiverged { .. }
            | RdmError::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}
