//! Minimal reverse-mode differentiation over dense matrices and edge-valued
//! sparse adjacencies: just the primitives a bias-free GCN, a cross-entropy
//! loss and an unrolled Sinkhorn solver need.

mod hvp;
mod matrix;
mod sparse;
mod tape;

pub mod gradcheck;

pub use hvp::hvp_cross;
pub use matrix::DenseMatrix;
pub use sparse::{AdjacencyStructure, EdgeValuedAdjacency, TapeAdjacency};
pub use tape::{row_softmax, CustomOp, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss must be a 1x1 node, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("node {0} is not a registered parameter of this tape")]
    NotAParameter(usize),
}
