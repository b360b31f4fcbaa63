use std::path::PathBuf;

use thiserror::Error;

/// Failure of a command, classified by what the user has to fix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 config, 3 data (including unreadable files), 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl From<taskrank_core::Error> for Error {
    fn from(e: taskrank_core::Error) -> Self {
        use taskrank_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch(_) | E::FamilyTooLarge { .. } => Error::Config(msg),
            E::Empty(_) | E::InsufficientConnectivity { .. } | E::GaugeViolation { .. } => Error::Data(msg),
            E::NonFinite(_)
            | E::RankDeficient(_)
            | E::CgNotConverged { .. }
            | E::DegenerateContrast(_)
            | E::Diverged { .. }
            | E::Decomposition(_) => Error::Numerical(msg),
        }
    }
}
