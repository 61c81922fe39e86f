use std::io;

use thiserror::Error;

/// Failures raised by the tensor engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("{0}")]
    Invalid(String),
}

/// Failures raised while building or querying a graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge references unknown {kind} node `{raw}`")]
    UnknownNode { raw: String, kind: &'static str },
    #[error("duplicate {kind} node `{raw}`")]
    DuplicateNode { raw: String, kind: &'static str },
    #[error("node index {index} out of range ({count} nodes)")]
    OutOfRange { index: usize, count: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
