//! Reverse-mode tape over dense matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves are either
//! registered parameters (gradients are returned for them) or constants.
//! Operations are appended in evaluation order, so the node list is already
//! a topological order and [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use super::sparse::{spmm_backward, spmm_forward, AdjacencyStructure, TapeAdjacency};
use super::{DenseMatrix, DiffError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive defined outside this module. `vjp` receives the forward
/// inputs, the forward output and the output cotangent, and returns one
/// cotangent per input (same shapes as the inputs).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn vjp(
        &self,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        grad_out: &DenseMatrix,
    ) -> Vec<DenseMatrix>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    RowSoftmax(Var),
    Spmm {
        structure: Arc<AdjacencyStructure>,
        values: Var,
        self_loops: Var,
        h: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar loss with respect to every registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Var>,
    grads: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, param: Var) -> Result<&DenseMatrix, DiffError> {
        self.params
            .iter()
            .position(|&p| p == param)
            .map(|k| &self.grads[k])
            .ok_or(DiffError::NotAParameter(param.0))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::RowSoftmax(a), ng)
    }

    /// `adj * h` for a symmetric edge-valued adjacency.
    pub fn masked_spmm(&mut self, adj: &TapeAdjacency, h: Var) -> Result<Var, DiffError> {
        let values = self.value(adj.values);
        let self_loops = self.value(adj.self_loops);
        if values.len() != adj.structure.num_edges()
            || self_loops.len() != adj.structure.num_nodes()
        {
            return Err(DiffError::Shape(
                "adjacency values do not match its structure".into(),
            ));
        }
        let out = spmm_forward(
            &adj.structure,
            values.as_slice(),
            self_loops.as_slice(),
            self.value(h),
        )?;
        let ng = self.needs(adj.values) || self.needs(adj.self_loops) || self.needs(h);
        Ok(self.push(
            out,
            Op::Spmm {
                structure: Arc::clone(&adj.structure),
                values: adj.values,
                self_loops: adj.self_loops,
                h,
            },
            ng,
        ))
    }

    /// Records a custom primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: DenseMatrix, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(DiffError::NotAParameter(loss.0));
        }
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(DiffError::NotScalar(r, c));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let keep = matches!(node.op, Op::Leaf);
            self.propagate(node, &g, &mut grads);
            if keep {
                grads[idx] = Some(g);
            }
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                grads
                    .get(p.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| {
                        let (r, c) = self.value(p).shape();
                        DenseMatrix::zeros(r, c)
                    })
            })
            .collect();
        Ok(Gradients {
            params: self.params.clone(),
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let mut send = |v: Var, d: DenseMatrix| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.accumulate(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    send(*a, g.matmul(&bv.transpose()).expect("shape checked forward"));
                }
                if self.needs(*b) {
                    send(*b, av.transpose().matmul(g).expect("shape checked forward"));
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    send(*a, g.hadamard(bv).expect("shape checked forward"));
                }
                if self.needs(*b) {
                    send(*b, g.hadamard(av).expect("shape checked forward"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Scale(a, s) => send(*a, g.scale(*s)),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, DenseMatrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Relu(a) => {
                let d = self
                    .value(*a)
                    .zip_with(g, |x, gx| if x > 0.0 { gx } else { 0.0 })
                    .expect("same shape");
                send(*a, d);
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                send(*a, d);
            }
            Op::Spmm {
                structure,
                values,
                self_loops,
                h,
            } => {
                let vals = self.value(*values);
                let loops = self.value(*self_loops);
                let (dv, ds, dh) = spmm_backward(
                    structure,
                    vals.as_slice(),
                    loops.as_slice(),
                    self.value(*h),
                    g,
                );
                let (vr, vc) = vals.shape();
                let (sr, sc) = loops.shape();
                send(*values, DenseMatrix::from_vec(vr, vc, dv).expect("sized"));
                send(*self_loops, DenseMatrix::from_vec(sr, sc, ds).expect("sized"));
                send(*h, dh);
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&DenseMatrix> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.vjp(&ins, &node.value, g);
                debug_assert_eq!(ds.len(), inputs.len(), "{} vjp arity", op.name());
                for (&v, d) in inputs.iter().zip(ds) {
                    send(v, d);
                }
            }
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn row_softmax(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
