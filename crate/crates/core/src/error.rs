use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("schema error on line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("sequence of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("session graph is empty: history has no content tokens")]
    EmptyGraph,
    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::DegenerateRow { .. } => "degenerate_row",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non_finite",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Checkpoint(_) => "checkpoint",
            Error::TokenOutOfRange { .. } => "token_range",
            Error::TooLong { .. } => "too_long",
            Error::EmptyGraph => "empty_graph",
            Error::IsolatedNode(_) => "isolated_node",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
