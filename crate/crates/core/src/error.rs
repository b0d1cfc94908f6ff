use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A text file could not be parsed; `line` is 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// A scene invariant does not hold at the given point.
    #[error("point {point}: {violation}")]
    Invariant { point: usize, violation: Violation },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{0}")]
    Unavailable(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("could not place object {object} after {attempts} attempts")]
    Placement { object: usize, attempts: usize },
}

/// The scene invariant a point violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonFiniteCoordinate,
    LabelOutOfRange(i32),
    InstanceOutOfRange(i32),
    InstanceOnStuff,
    InstanceLabelInconsistency,
    NonContiguousInstances,
    BadScores,
    ArgmaxMismatch { label: i32, argmax: i32 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonFiniteCoordinate => write!(f, "non-finite coordinate"),
            Violation::LabelOutOfRange(l) => write!(f, "semantic label {l} out of range"),
            Violation::InstanceOutOfRange(i) => write!(f, "instance id {i} out of range"),
            Violation::InstanceOnStuff => {
                write!(f, "instance point carries a stuff or unlabeled class")
            }
            Violation::InstanceLabelInconsistency => write!(f, "instance label inconsistency"),
            Violation::NonContiguousInstances => write!(f, "instance ids are not contiguous"),
            Violation::BadScores => {
                write!(f, "semantic scores must be non-negative and sum to 1")
            }
            Violation::ArgmaxMismatch { label, argmax } => {
                write!(
                    f,
                    "semantic label {label} differs from score arg-max {argmax}"
                )
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
