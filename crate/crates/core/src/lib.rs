//! WAML: graph reduction, parameter-free weighted-averaging graph convolution,
//! a residual feed-forward head trained with an in-batch contrastive loss,
//! and exact top-K retrieval evaluation.

pub mod ablation;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod ffn;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod reduction;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod waml;

pub use error::{Error, GraphError, Result, TensorError};
pub use graph::{build_graph, Csr, EdgeType, HeteroGraph, NodeType, RawEdge};
pub use tensor::{Tape, Tensor, Var};
