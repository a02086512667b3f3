use std::fmt;
use std::path::PathBuf;

use mempath_core::{GraphError, SolverError};
use thiserror::Error;

/// Position of a parse failure within a text file (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph generation failed: {0}")]
    Generation(#[from] GraphError),
    #[error("no kink detected within {t_max} s")]
    Detection { t_max: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {message}", path.display(), position.map(|p| format!(":{p}")).unwrap_or_default())]
    Malformed {
        path: PathBuf,
        position: Option<Position>,
        message: String,
    },
    #[error("simulation failed: {0}")]
    Solver(#[from] SolverError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code. Usage errors reported by the argument parser
    /// exit with 2 as well.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Generation(_) => 3,
            Error::Detection { .. } => 4,
            Error::Io { .. } => 5,
            Error::Malformed { .. } => 6,
            Error::Solver(_) => 7,
            Error::InsufficientData(_) => 8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let errs = [
            Error::Config(String::new()),
            Error::Generation(GraphError::GenerationFailed { attempts: 1 }),
            Error::Detection { t_max: 1.0 },
            Error::io("x", std::io::Error::other("x")),
            Error::Malformed {
                path: "x".into(),
                position: None,
                message: String::new(),
            },
            Error::Solver(SolverError::SingularSystem),
            Error::InsufficientData(String::new()),
        ];
        let mut codes: Vec<u8> = errs.iter().map(Error::exit_code).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
        assert!(!codes.contains(&0));
    }

    #[test]
    fn malformed_shows_position() {
        let e = Error::Malformed {
            path: "g.graph".into(),
            position: Some(Position { line: 3, column: 7 }),
            message: "missing field `start`".into(),
        };
        assert_eq!(e.to_string(), "g.graph:3:7: missing field `start`");
    }
}
