use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid {entity}: {reason}")]
    Validation { entity: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("network is degenerate: {0} (check for floating phases or zero-impedance loops)")]
    DegenerateNetwork(String),

    #[error("constraint matrix is rank deficient: kernel has {found} columns, expected {expected}")]
    RankDeficient { expected: usize, found: usize },

    #[error("magnitude gradient undefined for sensor {sensor}: measured quantity is {magnitude:e} p.u.")]
    SingularGradient { sensor: String, magnitude: f64 },

    #[error("system is unobservable: {deficient} direction(s) of the normal matrix are not determined")]
    Unobservable { deficient: usize },

    #[error("prior is infeasible: zero-injection residual {residual:e} exceeds {limit:e}")]
    InfeasiblePrior { residual: f64, limit: f64 },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn validation(entity: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            entity: entity.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateNetwork(_)
                | Error::RankDeficient { .. }
                | Error::SingularGradient { .. }
                | Error::Unobservable { .. }
                | Error::InfeasiblePrior { .. }
        )
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
