use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::DenseMatrix;
use crate::gnn::{fit, glorot_matrix, EpochRecord, FitConfig, GcnParams, WeightMask};
use crate::graphio::{Graph, Normalization};
use crate::pruner::{run_iterative, Method, PruneConfig, TicketState};

use super::HarnessError;

const TARGET_INIT_STREAM: u64 = 7;

/// How the source network is adapted to the target's classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Swap the output layer for a fresh dense `H x C_target` layer.
    ReplaceLast,
    /// Keep every source layer and append a fresh dense `C_source x C_target` layer.
    AddLayer,
}

/// Which weights and masks the target model starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferInit {
    /// Ticket masks with the ticket's retrained source weights.
    PostTrained,
    /// Ticket masks with the source initialization `Θ0`.
    ReInitialized,
    /// Ticket masks with a fresh random initialization.
    RandomInitGlt,
    /// Dense source model trained on the source graph.
    DensePostTrained,
    /// Dense model with a fresh random initialization.
    DenseRandom,
}

impl TransferInit {
    pub const ALL: [TransferInit; 5] = [
        TransferInit::PostTrained,
        TransferInit::ReInitialized,
        TransferInit::RandomInitGlt,
        TransferInit::DensePostTrained,
        TransferInit::DenseRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferInit::PostTrained => "post-trained",
            TransferInit::ReInitialized => "re-initialized",
            TransferInit::RandomInitGlt => "random-init-glt",
            TransferInit::DensePostTrained => "dense-post-trained",
            TransferInit::DenseRandom => "dense-random",
        }
    }

    fn uses_ticket(self) -> bool {
        matches!(
            self,
            TransferInit::PostTrained | TransferInit::ReInitialized | TransferInit::RandomInitGlt
        )
    }
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::ReplaceLast => "replace-last",
            Head::AddLayer => "add-layer",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for TransferInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Head {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Head::ReplaceLast, Head::AddLayer]
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| format!("unknown head `{s}` (expected replace-last or add-layer)"))
    }
}

impl FromStr for TransferInit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TransferInit::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown transfer init `{s}`"))
    }
}

/// Everything the target runs need from the source task.
#[derive(Debug, Clone)]
pub struct TransferSource {
    pub ticket: TicketState,
    /// Ticket retrained on the source graph.
    pub trained: GcnParams,
    /// Dense model trained on the source graph from the same `Θ0`.
    pub dense_trained: GcnParams,
}

/// Prunes on the source graph with `method`, then trains the dense model
/// for `cfg.retrain_epochs` from the same initialization.
pub fn prepare_source(
    graph: &Graph,
    params: GcnParams,
    cfg: &PruneConfig,
    method: Method,
) -> Result<TransferSource, HarnessError> {
    let mut dense = GcnParams::new(params.theta0().to_vec())?;
    let (ticket, fin) = run_iterative(graph, params, cfg, method).map_err(|f| f.error)?;
    let fc = FitConfig {
        epochs: cfg.retrain_epochs,
        lr: cfg.eta2,
        normalization: cfg.normalization,
    };
    let ones = WeightMask::ones(&dense);
    fit(graph, &vec![1.0; graph.num_edges()], &mut dense, &ones, &fc)?;
    Ok(TransferSource {
        ticket,
        trained: fin.params,
        dense_trained: dense,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub head: Head,
    pub epochs: usize,
    pub lr: f64,
    pub normalization: Normalization,
    /// Seeds the fresh layers and the random initializations.
    pub seed: u64,
    /// Hidden width the target expects; must match the source when set.
    pub hidden_dim: Option<usize>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            head: Head::ReplaceLast,
            epochs: 200,
            lr: 1e-2,
            normalization: Normalization::default(),
            seed: 0,
            hidden_dim: None,
        }
    }
}

fn ones_like(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::filled(m.rows(), m.cols(), 1.0)
}

/// Target model for one (head, init) pair: weights plus a weight mask whose
/// frozen entries are the ticket's pruned weights in carried-over layers.
///
/// The fresh random body (random-init GLT, dense random) and the fresh head
/// are drawn from one generator seeded by `cfg.seed`, body first, so the two
/// random-start modes share their weights.
pub fn build_target_model(
    source: &TransferSource,
    target: &Graph,
    cfg: &TransferConfig,
    init: TransferInit,
) -> Result<(GcnParams, WeightMask), HarnessError> {
    let theta0 = source.ticket.theta0();
    let first = &theta0[0];
    if first.rows() != target.num_features() {
        return Err(HarnessError::Incompatible(format!(
            "source input width {} but the target has {} features",
            first.rows(),
            target.num_features()
        )));
    }
    if let Some(h) = cfg.hidden_dim {
        if first.cols() != h {
            return Err(HarnessError::Incompatible(format!(
                "source hidden width {} but the target config asks for {h}",
                first.cols()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TARGET_INIT_STREAM);
    let fresh: Vec<DenseMatrix> = theta0
        .iter()
        .map(|w| glorot_matrix(w.rows(), w.cols(), &mut rng))
        .collect();
    let body: Vec<DenseMatrix> = match init {
        TransferInit::PostTrained => source.trained.weights().to_vec(),
        TransferInit::ReInitialized => theta0.to_vec(),
        TransferInit::DensePostTrained => source.dense_trained.weights().to_vec(),
        TransferInit::RandomInitGlt | TransferInit::DenseRandom => fresh,
    };
    let (masks, frozen): (Vec<DenseMatrix>, Vec<Vec<bool>>) = if init.uses_ticket() {
        let b = source.ticket.weight_mask.binarized();
        (b.values, b.frozen)
    } else {
        (
            body.iter().map(ones_like).collect(),
            body.iter().map(|w| vec![false; w.len()]).collect(),
        )
    };
    let (mut weights, mut masks, mut frozen) = (body, masks, frozen);
    let last = weights.len() - 1;
    let classes = target.num_classes();
    match cfg.head {
        Head::ReplaceLast => {
            let rows = weights[last].rows();
            weights[last] = glorot_matrix(rows, classes, &mut rng);
            masks[last] = ones_like(&weights[last]);
            frozen[last] = vec![false; rows * classes];
        }
        Head::AddLayer => {
            let rows = weights[last].cols();
            let w = glorot_matrix(rows, classes, &mut rng);
            masks.push(ones_like(&w));
            frozen.push(vec![false; w.len()]);
            weights.push(w);
        }
    }
    let params = GcnParams::new(weights)?;
    // frozen entries must hold 0 in the mask
    for (m, fr) in masks.iter_mut().zip(&frozen) {
        for (x, &f) in m.as_mut_slice().iter_mut().zip(fr) {
            if f {
                *x = 0.0;
            }
        }
    }
    Ok((params, WeightMask { values: masks, frozen }))
}

#[derive(Debug, Clone)]
pub struct TransferCurve {
    pub head: Head,
    pub init: TransferInit,
    /// Per-epoch accuracies on the target, epoch 0 first.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Test accuracy at the best-validation epoch.
    pub final_test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TransferReport {
    pub curves: Vec<TransferCurve>,
}

impl TransferReport {
    pub fn final_acc(&self, init: TransferInit) -> Option<f64> {
        self.curves.iter().find(|c| c.init == init).map(|c| c.final_test_acc)
    }
}

/// Trains all five starting points on the unmasked target graph.
pub fn run_transfer(
    source: &TransferSource,
    target: &Graph,
    cfg: &TransferConfig,
) -> Result<TransferReport, HarnessError> {
    let edges = vec![1.0; target.num_edges()];
    let fc = FitConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        normalization: cfg.normalization,
    };
    let mut curves = Vec::with_capacity(TransferInit::ALL.len());
    for init in TransferInit::ALL {
        let (mut params, wmask) = build_target_model(source, target, cfg, init)?;
        let res = fit(target, &edges, &mut params, &wmask, &fc)?;
        curves.push(TransferCurve {
            head: cfg.head,
            init,
            history: res.history,
            best_epoch: res.best_epoch,
            final_test_acc: res.test_acc,
        });
    }
    Ok(TransferReport { curves })
}

#[derive(Serialize)]
struct CurveRow<'a> {
    head: &'a str,
    init: &'a str,
    epoch: usize,
    loss: f64,
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
}

/// One row per (head, init, epoch).
pub fn write_transfer_csv(reports: &[TransferReport], path: &Path) -> Result<(), HarnessError> {
    let fmt = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for c in reports.iter().flat_map(|r| &r.curves) {
        for e in &c.history {
            w.serialize(CurveRow {
                head: c.head.as_str(),
                init: c.init.as_str(),
                epoch: e.epoch,
                loss: e.loss,
                train_acc: e.train_acc,
                val_acc: e.val_acc,
                test_acc: e.test_acc,
            })
            .map_err(fmt)?;
        }
    }
    w.flush().map_err(super::io_err(path))
}
