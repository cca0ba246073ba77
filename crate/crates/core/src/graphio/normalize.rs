//! Symmetric normalization `D^-1/2 (M ⊙ A + I) D^-1/2` with an edge mask `M`.
//!
//! The mask is applied to `A` before self-loops are added. Self-loops are
//! never masked. Two degree conventions are available:
//!
//! - [`Normalization::FixedDegree`]: `D` is the degree matrix of the
//!   unmasked `A + I`. A masked edge only scales its own two entries, so an
//!   edge mask value influences exactly the messages sent along that edge.
//! - [`Normalization::MaskedDegree`]: `D` is recomputed from the masked
//!   weights, `d_i = 1 + sum of incident mask values`. Fully masked nodes
//!   get a self-loop of 1. Every mask value also moves the normalization of
//!   all edges incident to either endpoint.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{
    AdjacencyStructure, CustomOp, DenseMatrix, DiffError, EdgeValuedAdjacency, Tape,
    TapeAdjacency, Var,
};

use super::{Graph, GraphError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    FixedDegree,
    MaskedDegree,
}

fn degrees(structure: &AdjacencyStructure, mask: &[f64], mode: Normalization) -> Vec<f64> {
    let mut d = vec![1.0; structure.num_nodes()];
    for (&(i, j), &m) in structure.edges().iter().zip(mask) {
        let w = match mode {
            Normalization::FixedDegree => 1.0,
            Normalization::MaskedDegree => m,
        };
        d[i] += w;
        d[j] += w;
    }
    d
}

fn forward(
    structure: &AdjacencyStructure,
    mask: &[f64],
    mode: Normalization,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = degrees(structure, mask, mode);
    let values = structure
        .edges()
        .iter()
        .zip(mask)
        .map(|(&(i, j), &m)| m / (d[i] * d[j]).sqrt())
        .collect();
    let self_loops = d.iter().map(|x| 1.0 / x).collect();
    (values, self_loops, d)
}

/// Normalized adjacency for the given mask values (one per edge of `graph`).
pub fn normalize_masked(
    graph: &Graph,
    mask: &[f64],
    mode: Normalization,
) -> Result<EdgeValuedAdjacency, GraphError> {
    if mask.len() != graph.num_edges() {
        return Err(GraphError::MaskLength {
            expected: graph.num_edges(),
            found: mask.len(),
        });
    }
    let (values, self_loops, _) = forward(graph.structure(), mask, mode);
    Ok(EdgeValuedAdjacency::new(
        Arc::clone(graph.structure()),
        values,
        self_loops,
    )?)
}

/// Records the normalization of the edge-mask node `mask` (`|E| x 1`).
pub fn normalize_masked_on(
    tape: &mut Tape,
    structure: &Arc<AdjacencyStructure>,
    mask: Var,
    mode: Normalization,
) -> Result<TapeAdjacency, GraphError> {
    let m = tape.value(mask);
    if m.len() != structure.num_edges() {
        return Err(GraphError::MaskLength {
            expected: structure.num_edges(),
            found: m.len(),
        });
    }
    let (values, self_loops, d) = forward(structure, m.as_slice(), mode);
    if d.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(DiffError::NonFinite("normalized degree".into()).into());
    }
    let values = tape.custom(
        &[mask],
        DenseMatrix::column(values),
        Box::new(NormalizeOp {
            structure: Arc::clone(structure),
            mode,
            output: Output::Edges,
        }),
    );
    let self_loops = tape.custom(
        &[mask],
        DenseMatrix::column(self_loops),
        Box::new(NormalizeOp {
            structure: Arc::clone(structure),
            mode,
            output: Output::SelfLoops,
        }),
    );
    Ok(TapeAdjacency {
        structure: Arc::clone(structure),
        values,
        self_loops,
    })
}

enum Output {
    Edges,
    SelfLoops,
}

struct NormalizeOp {
    structure: Arc<AdjacencyStructure>,
    mode: Normalization,
    output: Output,
}

impl CustomOp for NormalizeOp {
    fn name(&self) -> &'static str {
        "normalize_masked"
    }

    fn vjp(&self, inputs: &[&DenseMatrix], output: &DenseMatrix, grad: &DenseMatrix) -> Vec<DenseMatrix> {
        let mask = inputs[0].as_slice();
        let edges = self.structure.edges();
        let d = degrees(&self.structure, mask, self.mode);
        let mut d_mask = vec![0.0; mask.len()];
        // cotangent with respect to each degree
        let mut d_deg = vec![0.0; d.len()];
        match self.output {
            Output::Edges => {
                for (e, &(i, j)) in edges.iter().enumerate() {
                    let g = grad.as_slice()[e];
                    d_mask[e] += g / (d[i] * d[j]).sqrt();
                    let v = output.as_slice()[e];
                    d_deg[i] -= 0.5 * g * v / d[i];
                    d_deg[j] -= 0.5 * g * v / d[j];
                }
            }
            Output::SelfLoops => {
                for (i, &di) in d.iter().enumerate() {
                    d_deg[i] -= grad.as_slice()[i] / (di * di);
                }
            }
        }
        if self.mode == Normalization::MaskedDegree {
            for (e, &(i, j)) in edges.iter().enumerate() {
                d_mask[e] += d_deg[i] + d_deg[j];
            }
        }
        vec![DenseMatrix::column(d_mask)]
    }
}
