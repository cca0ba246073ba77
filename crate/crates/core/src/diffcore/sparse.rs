use std::sync::Arc;

use super::{DenseMatrix, DiffError, Var};

/// Undirected edge list over `n` nodes, shared between the graph and every
/// adjacency built on it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyStructure {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl AdjacencyStructure {
    /// Edges must satisfy `i < j < n` and be unique.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Arc<Self>, DiffError> {
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for &(i, j) in &edges {
            if i >= j || j >= n {
                return Err(DiffError::Shape(format!(
                    "edge ({i}, {j}) is not an ordered pair below {n}"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(DiffError::Shape(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Arc::new(Self { n, edges }))
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Symmetric adjacency with one value per undirected edge plus a value per
/// self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeValuedAdjacency {
    pub structure: Arc<AdjacencyStructure>,
    pub values: Vec<f64>,
    pub self_loop_values: Vec<f64>,
}

impl EdgeValuedAdjacency {
    pub fn new(
        structure: Arc<AdjacencyStructure>,
        values: Vec<f64>,
        self_loop_values: Vec<f64>,
    ) -> Result<Self, DiffError> {
        if values.len() != structure.num_edges() || self_loop_values.len() != structure.num_nodes()
        {
            return Err(DiffError::Shape(format!(
                "adjacency over {} nodes / {} edges given {} self-loop and {} edge values",
                structure.num_nodes(),
                structure.num_edges(),
                self_loop_values.len(),
                values.len()
            )));
        }
        if values.iter().chain(&self_loop_values).any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite("adjacency values".into()));
        }
        Ok(Self {
            structure,
            values,
            self_loop_values,
        })
    }

    pub fn n(&self) -> usize {
        self.structure.num_nodes()
    }

    /// `self * h` without recording anything.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix, DiffError> {
        spmm_forward(&self.structure, &self.values, &self.self_loop_values, h)
    }

    /// Explicit `n x n` form, for oracles and small fixtures.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.n();
        let mut out = DenseMatrix::zeros(n, n);
        for (i, &s) in self.self_loop_values.iter().enumerate() {
            out.set(i, i, s);
        }
        for (&(i, j), &v) in self.structure.edges().iter().zip(&self.values) {
            out.set(i, j, v);
            out.set(j, i, v);
        }
        out
    }
}

/// Adjacency whose edge and self-loop values live on a tape.
#[derive(Debug, Clone)]
pub struct TapeAdjacency {
    pub structure: Arc<AdjacencyStructure>,
    pub values: Var,
    pub self_loops: Var,
}

pub(crate) fn spmm_forward(
    structure: &AdjacencyStructure,
    values: &[f64],
    self_loops: &[f64],
    h: &DenseMatrix,
) -> Result<DenseMatrix, DiffError> {
    let n = structure.num_nodes();
    if h.rows() != n {
        return Err(DiffError::Shape(format!(
            "adjacency over {n} nodes applied to {} rows",
            h.rows()
        )));
    }
    let cols = h.cols();
    let mut out = DenseMatrix::zeros(n, cols);
    for i in 0..n {
        let s = self_loops[i];
        let src = h.row(i).to_vec();
        for (o, x) in out.row_mut(i).iter_mut().zip(&src) {
            *o += s * x;
        }
    }
    for (&(i, j), &v) in structure.edges().iter().zip(values) {
        if v == 0.0 {
            continue;
        }
        for c in 0..cols {
            let hi = h.get(i, c);
            let hj = h.get(j, c);
            out.as_mut_slice()[i * cols + c] += v * hj;
            out.as_mut_slice()[j * cols + c] += v * hi;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of `spmm_forward`: returns (d values, d self-loops, d h).
pub(crate) fn spmm_backward(
    structure: &AdjacencyStructure,
    values: &[f64],
    self_loops: &[f64],
    h: &DenseMatrix,
    grad: &DenseMatrix,
) -> (Vec<f64>, Vec<f64>, DenseMatrix) {
    let n = structure.num_nodes();
    let cols = h.cols();
    let mut d_values = vec![0.0; values.len()];
    let mut d_self = vec![0.0; n];
    let mut d_h = DenseMatrix::zeros(n, cols);
    for i in 0..n {
        let gi = grad.row(i);
        let hi = h.row(i);
        d_self[i] = gi.iter().zip(hi).map(|(a, b)| a * b).sum();
        let s = self_loops[i];
        for (d, g) in d_h.row_mut(i).iter_mut().zip(gi) {
            *d += s * g;
        }
    }
    for (e, (&(i, j), &v)) in structure.edges().iter().zip(values).enumerate() {
        let mut acc = 0.0;
        for c in 0..cols {
            let gi = grad.get(i, c);
            let gj = grad.get(j, c);
            acc += gi * h.get(j, c) + gj * h.get(i, c);
            d_h.as_mut_slice()[j * cols + c] += v * gi;
            d_h.as_mut_slice()[i * cols + c] += v * gj;
        }
        d_values[e] = acc;
    }
    (d_values, d_self, d_h)
}
