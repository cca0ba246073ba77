//! Experiment plumbing: metrics, pruning sweeps, transfer runs, WD traces
//! and report aggregation.

mod experiment;
mod metrics;
mod report;
mod trace;
mod transfer;

use std::path::PathBuf;

use thiserror::Error;

use crate::gnn::GnnError;
use crate::graphio::GraphError;
use crate::otax::OtError;
use crate::pruner::PruneError;

pub use experiment::{
    execute_experiment, run_experiment, run_single, train_dense, write_outputs, ExperimentConfig,
    ExperimentReport, MethodSummary, MetricsRecord, RoundSummary, RunFailure, RunOutcome, Stat,
    SummaryFile, OUT_DIR_ENV,
};
pub use metrics::{mac_count, macs_at, sparsity_metrics, ticket_macs};
pub use report::{build_comparison, collect_summaries, report, write_comparison, ComparisonRow};
pub use trace::{run_wd_trace, write_trace_csv, TraceRow};
pub use transfer::{
    build_target_model, prepare_source, run_transfer, write_transfer_csv, Head, TransferConfig,
    TransferCurve, TransferInit, TransferReport, TransferSource,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("malformed config {}: {msg}", path.display())]
    ConfigFile { path: PathBuf, msg: String },
    #[error("dataset: {0}")]
    Dataset(#[from] GraphError),
    #[error("incompatible transfer: {0}")]
    Incompatible(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Ot(#[from] OtError),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pearson correlation; NaN when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
