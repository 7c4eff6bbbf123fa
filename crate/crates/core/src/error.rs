use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format { line: Option<usize>, msg: String },
    #[error("invalid range spec: {0}")]
    Spec(String),
    #[error("cell index ({row}, {col}) out of bounds for {rows}x{cols} grid")]
    Index {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: total loss {value}")]
    Divergence { step: usize, value: f64 },
    #[error("candidate footprint lies entirely outside the grid")]
    OutOfGrid,
    #[error("could not place car {index} without overlap after {tries} tries")]
    Placement { index: usize, tries: usize },
    #[error("average precision needs at least one ground-truth object")]
    NoGroundTruth,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("bin edges must be strictly increasing with at least two entries")]
    BadEdges,
    #[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }
}
