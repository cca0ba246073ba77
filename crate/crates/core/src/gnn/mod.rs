//! Bias-free GCN with masked weights, its supervised cross-entropy and the
//! combined objective `L0 + lambda * L1`.
//!
//! For two layers the forward pass is
//! `Z = softmax(Â relu(Â X (m0 ⊙ W0)) (m1 ⊙ W1))`; deeper stacks repeat the
//! hidden block.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{
    row_softmax, CustomOp, DenseMatrix, DiffError, EdgeValuedAdjacency, Tape, TapeAdjacency, Var,
};
use crate::graphio::{normalize_masked, normalize_masked_on, Graph, GraphError, Normalization};
use crate::otax::{aux_loss_l1_on, OtError, SinkhornConfig};

/// Floor applied inside the log of the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the train split is empty")]
    EmptyTrainSet,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Layer weights plus the snapshot taken at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    weights: Vec<DenseMatrix>,
    theta0: Vec<DenseMatrix>,
}

impl GcnParams {
    /// Snapshots `weights` as the initialization.
    pub fn new(weights: Vec<DenseMatrix>) -> Result<Self, GnnError> {
        for pair in weights.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(GnnError::Shape(format!(
                    "layer of width {} feeds a layer expecting {}",
                    pair[0].cols(),
                    pair[1].rows()
                )));
            }
        }
        if weights.is_empty() {
            return Err(GnnError::Shape("a GCN needs at least one layer".into()));
        }
        Ok(Self {
            theta0: weights.clone(),
            weights,
        })
    }

    /// Current weights with an explicit (possibly different) snapshot.
    pub fn from_parts(weights: Vec<DenseMatrix>, theta0: Vec<DenseMatrix>) -> Result<Self, GnnError> {
        let mut p = Self::new(theta0)?;
        if weights.len() != p.theta0.len()
            || weights.iter().zip(&p.theta0).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(GnnError::Shape("weights and snapshot differ in shape".into()));
        }
        p.weights = weights;
        Ok(p)
    }

    /// Glorot-uniform layers for widths `dims[0] -> dims[1] -> ...`.
    pub fn glorot(dims: &[usize], rng: &mut impl Rng) -> Result<Self, GnnError> {
        if dims.len() < 2 {
            return Err(GnnError::Shape("need at least input and output widths".into()));
        }
        let weights = dims
            .windows(2)
            .map(|w| glorot_matrix(w[0], w[1], rng))
            .collect();
        Self::new(weights)
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.weights
    }

    pub fn theta0(&self) -> &[DenseMatrix] {
        &self.theta0
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights[0].cols()
    }

    /// Restores the weights to the snapshot, bit for bit.
    pub fn rewind(&mut self) {
        self.weights.clone_from(&self.theta0);
    }

    pub fn num_weights(&self) -> usize {
        self.weights.iter().map(DenseMatrix::len).sum()
    }
}

pub fn glorot_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized and finite")
}

/// Continuous weight-mask scores in `[0, 1]` plus permanently pruned flags.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub values: Vec<DenseMatrix>,
    pub frozen: Vec<Vec<bool>>,
}

impl WeightMask {
    pub fn ones(params: &GcnParams) -> Self {
        Self {
            values: params
                .weights()
                .iter()
                .map(|w| DenseMatrix::filled(w.rows(), w.cols(), 1.0))
                .collect(),
            frozen: params.weights().iter().map(|w| vec![false; w.len()]).collect(),
        }
    }

    /// All ones minus uniform noise in `[0, noise]`, so values start in
    /// `[1 - noise, 1]` and ties are broken before any projection.
    pub fn with_noise(params: &GcnParams, noise: f64, rng: &mut impl Rng) -> Self {
        let mut m = Self::ones(params);
        if noise > 0.0 {
            for layer in &mut m.values {
                for v in layer.as_mut_slice() {
                    *v -= rng.random_range(0.0..=noise);
                }
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.frozen.iter().map(Vec::len).sum()
    }

    /// Entries not frozen, i.e. the L0 norm of a binary mask.
    pub fn surviving(&self) -> usize {
        self.frozen.iter().flatten().filter(|&&f| !f).count()
    }

    /// Frozen entries hold exactly 0; the rest lie in `[0, 1]`.
    pub fn check_invariants(&self) -> bool {
        self.values.iter().zip(&self.frozen).all(|(v, fr)| {
            v.as_slice()
                .iter()
                .zip(fr)
                .all(|(&x, &f)| if f { x == 0.0 } else { (0.0..=1.0).contains(&x) })
        })
    }

    /// Surviving entries set to 1, frozen ones to 0.
    pub fn binarized(&self) -> Self {
        let mut m = self.clone();
        for (v, fr) in m.values.iter_mut().zip(&m.frozen) {
            for (x, &f) in v.as_mut_slice().iter_mut().zip(fr) {
                *x = if f { 0.0 } else { 1.0 };
            }
        }
        m
    }
}

/// Records the forward pass and returns the softmax output node.
pub fn gcn_forward_on(
    tape: &mut Tape,
    features: Var,
    adj: &TapeAdjacency,
    weights: &[Var],
    wmask: &[Var],
) -> Result<Var, GnnError> {
    if weights.len() != wmask.len() || weights.is_empty() {
        return Err(GnnError::Shape(format!(
            "{} weight layers with {} mask layers",
            weights.len(),
            wmask.len()
        )));
    }
    let mut h = features;
    let last = weights.len() - 1;
    for (l, (&w, &m)) in weights.iter().zip(wmask).enumerate() {
        let w_eff = tape.hadamard(m, w)?;
        let xw = tape.matmul(h, w_eff)?;
        h = tape.masked_spmm(adj, xw)?;
        if l != last {
            h = tape.relu(h);
        }
    }
    Ok(tape.row_softmax(h))
}

/// Forward pass without a tape.
pub fn gcn_forward(
    graph: &Graph,
    adj: &EdgeValuedAdjacency,
    params: &GcnParams,
    wmask: &WeightMask,
) -> Result<DenseMatrix, GnnError> {
    forward_with(graph.features(), adj, params.weights(), &wmask.values)
}

pub(crate) fn forward_with(
    features: &DenseMatrix,
    adj: &EdgeValuedAdjacency,
    weights: &[DenseMatrix],
    masks: &[DenseMatrix],
) -> Result<DenseMatrix, GnnError> {
    if weights.len() != masks.len() {
        return Err(GnnError::Shape("weight and mask layer counts differ".into()));
    }
    let mut h = features.clone();
    let last = weights.len() - 1;
    for (l, (w, m)) in weights.iter().zip(masks).enumerate() {
        let w_eff = m.hadamard(w)?;
        h = adj.spmm(&h.matmul(&w_eff)?)?;
        if l != last {
            h = h.map(|x| if x > 0.0 { x } else { 0.0 });
        }
    }
    Ok(row_softmax(&h))
}

struct PickNegLogOp {
    picks: Vec<(usize, usize)>,
}

impl CustomOp for PickNegLogOp {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn vjp(&self, inputs: &[&DenseMatrix], _out: &DenseMatrix, grad: &DenseMatrix) -> Vec<DenseMatrix> {
        let z = inputs[0];
        let g = grad.as_slice()[0];
        let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
        for &(r, c) in &self.picks {
            let p = z.get(r, c);
            if p > LOG_FLOOR {
                dz.set(r, c, dz.get(r, c) - g / p);
            }
        }
        vec![dz]
    }
}

fn check_train(graph: &Graph, z: &DenseMatrix) -> Result<(), GnnError> {
    if graph.split().train.is_empty() {
        return Err(GnnError::EmptyTrainSet);
    }
    if z.shape() != (graph.num_nodes(), graph.num_classes()) {
        return Err(GnnError::Shape(format!(
            "output {}x{} for {} nodes and {} classes",
            z.rows(),
            z.cols(),
            graph.num_nodes(),
            graph.num_classes()
        )));
    }
    Ok(())
}

/// Records `-sum_{l in train} ln max(Z[l, y_l], 1e-12)`.
pub fn loss_l0_on(tape: &mut Tape, z: Var, graph: &Graph) -> Result<Var, GnnError> {
    let zv = tape.value(z);
    check_train(graph, zv)?;
    let picks: Vec<(usize, usize)> = graph
        .split()
        .train
        .iter()
        .map(|&l| (l, graph.labels()[l]))
        .collect();
    let value: f64 = picks
        .iter()
        .map(|&(r, c)| -zv.get(r, c).max(LOG_FLOOR).ln())
        .sum();
    Ok(tape.custom(&[z], DenseMatrix::scalar(value), Box::new(PickNegLogOp { picks })))
}

/// Summed cross-entropy over the labeled nodes.
pub fn loss_l0(z: &DenseMatrix, graph: &Graph) -> Result<f64, GnnError> {
    check_train(graph, z)?;
    Ok(graph
        .split()
        .train
        .iter()
        .map(|&l| -z.get(l, graph.labels()[l]).max(LOG_FLOOR).ln())
        .sum())
}

/// How the objective is assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    /// Weight of the auxiliary Wasserstein term; 0 disables it.
    pub lambda: f64,
    pub sinkhorn: SinkhornConfig,
    pub normalization: Normalization,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            sinkhorn: SinkhornConfig::default(),
            normalization: Normalization::default(),
        }
    }
}

impl LossSpec {
    pub fn supervised_only(&self) -> Self {
        Self {
            lambda: 0.0,
            ..self.clone()
        }
    }
}

/// Loss value, its parts, and gradients with respect to every parameter block.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub l0: f64,
    pub l1: f64,
    pub z: DenseMatrix,
    pub grad_edge: Vec<f64>,
    pub grad_wmask: Vec<DenseMatrix>,
    pub grad_weights: Vec<DenseMatrix>,
}

/// Evaluates `L0 + lambda * L1` at an explicit parameter point and
/// backpropagates to the edge mask, weight mask and weights.
pub fn evaluate(
    graph: &Graph,
    edge_mask: &[f64],
    weight_mask: &[DenseMatrix],
    weights: &[DenseMatrix],
    spec: &LossSpec,
) -> Result<LossEval, GnnError> {
    if spec.lambda < 0.0 {
        return Err(GnnError::Shape(format!("lambda {} must be >= 0", spec.lambda)));
    }
    let mut tape = Tape::new();
    let x = tape.constant(graph.features().clone());
    let m_g = tape.param(DenseMatrix::column(edge_mask.to_vec()));
    let adj = normalize_masked_on(&mut tape, graph.structure(), m_g, spec.normalization)?;
    let w_vars: Vec<Var> = weights.iter().map(|w| tape.param(w.clone())).collect();
    let m_vars: Vec<Var> = weight_mask.iter().map(|m| tape.param(m.clone())).collect();
    let z = gcn_forward_on(&mut tape, x, &adj, &w_vars, &m_vars)?;
    let l0 = loss_l0_on(&mut tape, z, graph)?;
    let l0_value = tape.value(l0).as_slice()[0];
    let (loss, l1_value) = if spec.lambda > 0.0 {
        match aux_loss_l1_on(&mut tape, z, graph.num_classes(), &spec.sinkhorn)? {
            Some(l1) => {
                let l1_value = tape.value(l1).as_slice()[0];
                let weighted = tape.scale(l1, spec.lambda);
                (tape.add(l0, weighted)?, l1_value)
            }
            None => (l0, 0.0),
        }
    } else {
        (l0, 0.0)
    };
    let grads = tape.backward(loss)?;
    let eval = LossEval {
        loss: tape.value(loss).as_slice()[0],
        l0: l0_value,
        l1: l1_value,
        z: tape.value(z).clone(),
        grad_edge: grads.get(m_g)?.as_slice().to_vec(),
        grad_wmask: m_vars
            .iter()
            .map(|&v| grads.get(v).cloned())
            .collect::<Result<_, _>>()?,
        grad_weights: w_vars
            .iter()
            .map(|&v| grads.get(v).cloned())
            .collect::<Result<_, _>>()?,
    };
    if !eval.loss.is_finite() {
        return Err(GnnError::NonFinite("loss".into()));
    }
    Ok(eval)
}

/// `L0 + lambda * L1` for the given masks and parameters.
pub fn loss_combined(
    graph: &Graph,
    edge_mask: &[f64],
    params: &GcnParams,
    wmask: &WeightMask,
    spec: &LossSpec,
) -> Result<f64, GnnError> {
    evaluate(graph, edge_mask, &wmask.values, params.weights(), spec).map(|e| e.loss)
}

/// Fraction of `nodes` whose argmax prediction equals the label.
pub fn accuracy(z: &DenseMatrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let pred = z.row_argmax();
    let hits = nodes.iter().filter(|&&v| pred[v] == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

/// Plain gradient-descent training on `L0` with fixed masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub normalization: Normalization,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Epoch 0 is the untrained model; `epochs + 1` entries.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy at the best-validation epoch (earliest on ties).
    pub test_acc: f64,
}

/// Trains `params.weights` in place on `L0` with the masks held fixed.
/// Frozen weight-mask entries receive no update.
pub fn fit(
    graph: &Graph,
    edge_mask: &[f64],
    params: &mut GcnParams,
    wmask: &WeightMask,
    cfg: &FitConfig,
) -> Result<FitResult, GnnError> {
    let spec = LossSpec {
        lambda: 0.0,
        normalization: cfg.normalization,
        ..LossSpec::default()
    };
    let split = graph.split();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(usize, f64, f64)> = None;
    for epoch in 0..=cfg.epochs {
        let eval = evaluate(graph, edge_mask, &wmask.values, params.weights(), &spec)?;
        let rec = EpochRecord {
            epoch,
            loss: eval.l0,
            train_acc: accuracy(&eval.z, graph.labels(), &split.train),
            val_acc: accuracy(&eval.z, graph.labels(), &split.val),
            test_acc: accuracy(&eval.z, graph.labels(), &split.test),
        };
        if best.is_none_or(|(_, v, _)| rec.val_acc > v) {
            best = Some((epoch, rec.val_acc, rec.test_acc));
        }
        history.push(rec);
        if epoch == cfg.epochs {
            break;
        }
        for ((w, g), fr) in params
            .weights_mut()
            .iter_mut()
            .zip(&eval.grad_weights)
            .zip(&wmask.frozen)
        {
            for ((x, &gx), &f) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(fr) {
                if !f {
                    *x -= cfg.lr * gx;
                }
            }
        }
    }
    let (best_epoch, best_val_acc, test_acc) = best.expect("at least one epoch");
    Ok(FitResult {
        history,
        best_epoch,
        best_val_acc,
        test_acc,
    })
}

/// Normalized adjacency for an edge mask (convenience passthrough).
pub fn adjacency(graph: &Graph, edge_mask: &[f64], mode: Normalization) -> Result<EdgeValuedAdjacency, GnnError> {
    Ok(normalize_masked(graph, edge_mask, mode)?)
}
