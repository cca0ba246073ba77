use std::collections::HashSet;
use std::sync::Arc;

use crate::diffcore::{AdjacencyStructure, DenseMatrix};

use super::GraphError;

/// Disjoint train / validation / test node sets, each sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected attributed graph with node labels and a split.
#[derive(Debug, Clone)]
pub struct Graph {
    structure: Arc<AdjacencyStructure>,
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Graph {
    /// Node count is `features.rows()`. Edges must be unique `(i, j)` with
    /// `i < j`; labels must lie in `[0, num_classes)`.
    pub fn new(
        edges: Vec<(usize, usize)>,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        mut split: Split,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if labels.len() != n {
            return Err(GraphError::Invalid(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let mut seen = HashSet::new();
        for (name, set) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            for &v in set.iter() {
                if v >= n {
                    return Err(GraphError::Invalid(format!(
                        "{name} node {v} outside [0, {n})"
                    )));
                }
                if !seen.insert(v) {
                    return Err(GraphError::Invalid(format!(
                        "node {v} appears twice in the split"
                    )));
                }
            }
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        let structure = AdjacencyStructure::new(n, edges)?;
        Ok(Self {
            structure,
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.structure.num_edges()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.structure.edges()
    }

    pub fn structure(&self) -> &Arc<AdjacencyStructure> {
        &self.structure
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Unmasked degree of every node (self-loops excluded).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes()];
        for &(i, j) in self.edges() {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// Neighbor lists, sorted.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(i, j) in self.edges() {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same graph with a replacement split (used by tests and experiments).
    pub fn with_split(&self, split: Split) -> Result<Self, GraphError> {
        Graph::new(
            self.edges().to_vec(),
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            split,
        )
    }
}
