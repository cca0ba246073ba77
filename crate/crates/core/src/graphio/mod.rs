//! Graph data model, dataset loading, synthetic graphs and masked
//! normalization.

mod graph;
mod loader;
mod normalize;
mod receptive;
mod sbm;

pub use graph::{Graph, Split};
pub use loader::{
    load_planetoid_dir, write_planetoid_dir, LoadReport, EDGES_FILE, FEATURES_FILE, LABELS_FILE,
    SPLIT_FILE,
};
pub use normalize::{normalize_masked, normalize_masked_on, Normalization};
pub use receptive::{distance_to_set, edges_related_to_loss, related_edges};
pub use sbm::{generate_sbm, SbmConfig};

use std::path::PathBuf;

use thiserror::Error;

use crate::diffcore::DiffError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {}: {reason}", path.display())]
    MissingFile { path: PathBuf, reason: String },
    #[error("{}:{line}: expected {expected} fields, found {found}", path.display())]
    Ragged {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}:{line}: node id {id} out of range for {n} nodes", path.display())]
    OutOfRange {
        path: PathBuf,
        line: usize,
        id: usize,
        n: usize,
    },
    #[error("edge mask has {found} values for {expected} edges")]
    MaskLength { expected: usize, found: usize },
    #[error("the train split is empty")]
    EmptyTrainSet,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
