use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gnn::{fit, FitConfig, FitResult, GcnParams, WeightMask};
use crate::graphio::{generate_sbm, load_planetoid_dir, Graph, Normalization, SbmConfig};
use crate::otax::SinkhornConfig;
use crate::pruner::{run_iterative_observed, initial_masks, Method, PruneConfig, TicketState};

use super::metrics::macs_at;
use super::{io_err, mean_std, HarnessError};

/// Overrides [`ExperimentConfig::output_dir`] when set.
pub const OUT_DIR_ENV: &str = "GLT_OUT_DIR";

/// One sweep: dataset, methods, seeds and every pruning knob, as a flat
/// key-value JSON object. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory; `None` generates an SBM per seed.
    pub dataset: Option<PathBuf>,
    pub sbm_classes: usize,
    pub sbm_nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise: f64,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub hidden_dim: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub p_g: f64,
    pub p_theta: f64,
    pub s_g: f64,
    pub s_theta: f64,
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub alpha: f64,
    pub t_inner: usize,
    pub retrain_epochs: usize,
    pub probe_epochs: usize,
    pub mask_init_noise: f64,
    pub max_rounds: Option<usize>,
    pub normalization: Normalization,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PruneConfig::default();
        let s = SinkhornConfig::default();
        Self {
            dataset: None,
            sbm_classes: 3,
            sbm_nodes_per_class: 100,
            p_in: 0.1,
            p_out: 0.01,
            feature_noise: 1.0,
            feature_dim: 64,
            train_per_class: 20,
            val_per_class: 30,
            hidden_dim: 16,
            methods: vec![Method::Ours],
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            p_g: p.p_g,
            p_theta: p.p_theta,
            s_g: p.s_g,
            s_theta: p.s_theta,
            lambda: p.lambda,
            eta1: p.eta1,
            eta2: p.eta2,
            alpha: p.alpha,
            t_inner: p.t_inner,
            retrain_epochs: p.retrain_epochs,
            probe_epochs: p.probe_epochs,
            mask_init_noise: p.mask_init_noise,
            max_rounds: p.max_rounds,
            normalization: p.normalization,
            sinkhorn_epsilon: s.epsilon,
            sinkhorn_max_iters: s.max_iters,
            sinkhorn_tol: s.tol,
            sinkhorn_max_points: s.max_points,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::ConfigFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods must not be empty".into()));
        }
        if self.hidden_dim == 0 {
            return Err(HarnessError::Config("hidden_dim must be positive".into()));
        }
        if self.dataset.is_none() {
            self.sbm_config(0).validate()?;
        }
        self.prune_config(0).validate()?;
        Ok(())
    }

    /// Output directory, honouring [`OUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn sbm_config(&self, seed: u64) -> SbmConfig {
        SbmConfig {
            blocks: vec![self.sbm_nodes_per_class; self.sbm_classes],
            p_in: self.p_in,
            p_out: self.p_out,
            feature_noise: self.feature_noise,
            feature_dim: self.feature_dim,
            train_per_class: self.train_per_class,
            val_per_class: self.val_per_class,
            seed,
        }
    }

    pub fn prune_config(&self, seed: u64) -> PruneConfig {
        PruneConfig {
            p_g: self.p_g,
            p_theta: self.p_theta,
            s_g: self.s_g,
            s_theta: self.s_theta,
            lambda: self.lambda,
            eta1: self.eta1,
            eta2: self.eta2,
            alpha: self.alpha,
            t_inner: self.t_inner,
            retrain_epochs: self.retrain_epochs,
            probe_epochs: self.probe_epochs,
            mask_init_noise: self.mask_init_noise,
            seed,
            max_rounds: self.max_rounds,
            normalization: self.normalization,
            sinkhorn: SinkhornConfig {
                epsilon: self.sinkhorn_epsilon,
                max_iters: self.sinkhorn_max_iters,
                tol: self.sinkhorn_tol,
                max_points: self.sinkhorn_max_points,
                seed,
            },
        }
    }

    /// The dataset directory, or an SBM drawn with `seed`.
    pub fn load_graph(&self, seed: u64) -> Result<Graph, HarnessError> {
        match &self.dataset {
            Some(dir) => Ok(load_planetoid_dir(dir)?.0),
            None => Ok(generate_sbm(&self.sbm_config(seed))?),
        }
    }

    /// Glorot initialization `[F, hidden_dim, C]` seeded by `seed`.
    pub fn init_params(&self, graph: &Graph, seed: u64) -> Result<GcnParams, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(GcnParams::glorot(
            &[graph.num_features(), self.hidden_dim, graph.num_classes()],
            &mut rng,
        )?)
    }
}

/// One CSV row: a round of one (method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub seed: u64,
    pub round: usize,
    pub graph_sparsity: f64,
    pub weight_sparsity: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub macs: u64,
    /// Milliseconds since the run started, taken when the round finished.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Result of one (method, seed) run. On failure `ticket` holds the
/// partial state and `final_test_acc` is `None`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub ticket: Option<TicketState>,
    pub final_val_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub error: Option<String>,
}

/// Runs one method on one seed: build the graph and initialization, prune
/// iteratively, retrain. Errors are captured in the outcome.
pub fn run_single(cfg: &ExperimentConfig, method: Method, seed: u64) -> RunOutcome {
    let mut out = RunOutcome {
        method,
        seed,
        records: Vec::new(),
        ticket: None,
        final_val_acc: None,
        final_test_acc: None,
        error: None,
    };
    let setup = cfg
        .load_graph(seed)
        .and_then(|g| cfg.init_params(&g, seed).map(|p| (g, p)));
    let (graph, params) = match setup {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let pcfg = cfg.prune_config(seed);
    let (edge, wmask) = initial_masks(&graph, &params, &pcfg);
    let ticket = TicketState::new(method, pcfg, edge, wmask, params.theta0().to_vec());
    let start = Instant::now();
    let mut stamps = Vec::new();
    let result = run_iterative_observed(&graph, params, ticket, &mut |_| {
        stamps.push(start.elapsed().as_secs_f64() * 1e3);
    });
    let ticket = match result {
        Ok((ticket, fin)) => {
            out.final_val_acc = Some(fin.fit.best_val_acc);
            out.final_test_acc = Some(fin.fit.test_acc);
            ticket
        }
        Err(failure) => {
            out.error = Some(failure.to_string());
            *failure.partial
        }
    };
    out.records = ticket
        .history
        .iter()
        .zip(&stamps)
        .map(|(r, &wall_ms)| MetricsRecord {
            method,
            seed,
            round: r.round,
            graph_sparsity: r.graph_sparsity,
            weight_sparsity: r.weight_sparsity,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            macs: macs_at(&graph, &ticket, r.round),
            wall_ms,
        })
        .collect();
    out.ticket = Some(ticket);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        Self { mean, std }
    }
}

/// Across-seed statistics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Seeds contributing to this round.
    pub n: usize,
    pub graph_sparsity: Stat,
    pub weight_sparsity: Stat,
    pub val_acc: Stat,
    pub test_acc: Stat,
    pub macs: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub seeds: Vec<u64>,
    pub rounds: Vec<RoundSummary>,
    /// Final retraining accuracy over the seeds that completed.
    pub final_test_acc: Option<Stat>,
    pub failures: Vec<RunFailure>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config: ExperimentConfig,
    /// Keyed by method name.
    pub methods: BTreeMap<String, MethodSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunOutcome>,
    pub summary: SummaryFile,
}

impl ExperimentReport {
    /// All rows, ordered by (method, seed, round).
    pub fn records(&self) -> Vec<MetricsRecord> {
        let mut rows: Vec<MetricsRecord> = self.runs.iter().flat_map(|r| r.records.clone()).collect();
        rows.sort_by_key(|r| (r.method, r.seed, r.round));
        rows
    }
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunOutcome]) -> SummaryFile {
    let mut methods = BTreeMap::new();
    for &method in &cfg.methods {
        let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.method == method).collect();
        let mut by_round: BTreeMap<usize, Vec<&MetricsRecord>> = BTreeMap::new();
        for rec in mine.iter().flat_map(|r| &r.records) {
            by_round.entry(rec.round).or_default().push(rec);
        }
        let rounds = by_round
            .into_iter()
            .map(|(round, recs)| {
                let col = |f: fn(&MetricsRecord) -> f64| Stat::of(&recs.iter().map(|r| f(r)).collect::<Vec<_>>());
                RoundSummary {
                    round,
                    n: recs.len(),
                    graph_sparsity: col(|r| r.graph_sparsity),
                    weight_sparsity: col(|r| r.weight_sparsity),
                    val_acc: col(|r| r.val_acc),
                    test_acc: col(|r| r.test_acc),
                    macs: col(|r| r.macs as f64),
                }
            })
            .collect();
        let finals: Vec<f64> = mine.iter().filter_map(|r| r.final_test_acc).collect();
        let failures = mine
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| RunFailure {
                    seed: r.seed,
                    error: e.clone(),
                })
            })
            .collect();
        methods.insert(
            method.to_string(),
            MethodSummary {
                seeds: mine.iter().map(|r| r.seed).collect(),
                rounds,
                final_test_acc: (!finals.is_empty()).then(|| Stat::of(&finals)),
                failures,
            },
        );
    }
    SummaryFile {
        config: cfg.clone(),
        methods,
    }
}

/// Runs every (method, seed) pair in parallel without touching the file
/// system. Per-run failures are recorded, not propagated.
pub fn execute_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs: Vec<RunOutcome> = jobs.par_iter().map(|&(m, s)| run_single(cfg, m, s)).collect();
    let summary = summarize(cfg, &runs);
    Ok(ExperimentReport { runs, summary })
}

fn ticket_file_name(method: Method, seed: u64) -> String {
    format!("{method}-seed{seed}.glt")
}

/// Writes `metrics.csv`, `summary.json` and `tickets/<method>-seed<seed>.glt`
/// under `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    let tickets = dir.join("tickets");
    fs::create_dir_all(&tickets).map_err(io_err(&tickets))?;
    let csv_path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::Format {
        path: csv_path.clone(),
        msg: e.to_string(),
    })?;
    for rec in report.records() {
        w.serialize(&rec).map_err(|e| HarnessError::Format {
            path: csv_path.clone(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let json_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&report.summary).map_err(|e| HarnessError::Format {
        path: json_path.clone(),
        msg: e.to_string(),
    })?;
    fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
    for run in &report.runs {
        if let Some(t) = &run.ticket {
            let path = tickets.join(ticket_file_name(run.method, run.seed));
            fs::write(&path, t.to_archive()).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// [`execute_experiment`] followed by [`write_outputs`] into the resolved
/// output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let report = execute_experiment(cfg)?;
    write_outputs(&report, &cfg.resolved_output_dir())?;
    Ok(report)
}

/// Trains the dense model (all-ones masks) on `L0` for `retrain_epochs`.
pub fn train_dense(cfg: &ExperimentConfig, seed: u64) -> Result<(Graph, GcnParams, FitResult), HarnessError> {
    cfg.validate()?;
    let graph = cfg.load_graph(seed)?;
    let mut params = cfg.init_params(&graph, seed)?;
    let wmask = WeightMask::ones(&params);
    let fc = FitConfig {
        epochs: cfg.retrain_epochs,
        lr: cfg.eta2,
        normalization: cfg.normalization,
    };
    let fit = fit(&graph, &vec![1.0; graph.num_edges()], &mut params, &wmask, &fc)?;
    Ok((graph, params, fit))
}
