use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gnn::{evaluate, FitConfig, GcnParams, LossSpec, WeightMask};
use crate::graphio::Graph;
use crate::otax::{total_wd, SinkhornConfig};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub l0: f64,
    /// Summed one-vs-rest Wasserstein distance of the softmax outputs.
    pub wd: f64,
}

/// Dense training on `L0` alone, logging `L0` and the summed WD before
/// every update and after the last one (`epochs + 1` rows).
pub fn run_wd_trace(
    graph: &Graph,
    params: &mut GcnParams,
    fit: &FitConfig,
    sinkhorn: &SinkhornConfig,
) -> Result<Vec<TraceRow>, HarnessError> {
    let spec = LossSpec {
        lambda: 0.0,
        sinkhorn: sinkhorn.clone(),
        normalization: fit.normalization,
    };
    let wmask = WeightMask::ones(params);
    let edges = vec![1.0; graph.num_edges()];
    let mut rows = Vec::with_capacity(fit.epochs + 1);
    for epoch in 0..=fit.epochs {
        let eval = evaluate(graph, &edges, &wmask.values, params.weights(), &spec)?;
        rows.push(TraceRow {
            epoch,
            l0: eval.l0,
            wd: total_wd(&eval.z, sinkhorn)?,
        });
        if epoch == fit.epochs {
            break;
        }
        for (w, g) in params.weights_mut().iter_mut().zip(&eval.grad_weights) {
            for (x, gx) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *x -= fit.lr * gx;
            }
        }
    }
    Ok(rows)
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    let fmt = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(super::io_err(path))
}
