use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use glt::gnn::FitConfig;
use glt::graphio::{edges_related_to_loss, load_planetoid_dir, GraphError};
use glt::harness::{
    self, prepare_source, run_transfer, run_wd_trace, write_outputs, write_trace_csv,
    write_transfer_csv, ExperimentConfig, HarnessError, Head, TransferConfig,
};
use glt::pruner::Method;

#[derive(Parser)]
#[command(name = "glt", version, about = "Graph lottery ticket sparsification for GCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key-value JSON experiment config; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides the config; default is a generated SBM).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (overrides GLT_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense GCN and write its per-epoch curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run iterative pruning and write metrics, a summary and the ticket.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        /// Stop after this many rounds even if the targets are not reached.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Count the edges inside the labeled nodes' receptive field.
    AnalyzeEdges {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        layers: usize,
    },
    /// Prune on a source task and fine-tune five starting points on a target.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Config of the target task (its dataset, seed offset and epochs).
        #[arg(long)]
        target_config: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        /// `replace-last`, `add-layer` or `both`.
        #[arg(long, default_value = "both")]
        head: String,
    },
    /// Log L0 and the summed Wasserstein distance during dense training.
    WdTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Aggregate every summary.json below a directory into one CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to `<in>/comparison.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(describe)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    // fail before any run starts rather than once per seed
    if let Some(dir) = &cfg.dataset {
        load_planetoid_dir(dir).map_err(|e| describe(e.into()))?;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.resolved_output_dir());
    fs::create_dir_all(&dir)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", dir.display()))?;
    Ok(dir)
}

/// Maps library errors onto the CLI's user-facing categories.
fn describe(e: HarnessError) -> anyhow::Error {
    match e {
        HarnessError::ConfigFile { path, msg } => {
            anyhow::anyhow!("malformed config {}: {msg}", path.display())
        }
        HarnessError::Io { path, source } if path.extension().is_some_and(|x| x == "json") => {
            anyhow::anyhow!("cannot read config {}: {source}", path.display())
        }
        HarnessError::Dataset(GraphError::MissingFile { path, reason }) => {
            anyhow::anyhow!("missing dataset file {}: {reason}", path.display())
        }
        other => other.into(),
    }
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds.first().copied().unwrap_or(0)
}

fn cmd_train(common: &Common, epochs: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.retrain_epochs = e;
    }
    let seed = first_seed(&cfg);
    let (_, _, fit) = harness::train_dense(&cfg, seed).map_err(describe)?;
    let dir = out_dir(common, &cfg)?;
    let path = dir.join("train.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epoch", "loss", "train_acc", "val_acc", "test_acc"])?;
    for r in &fit.history {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
            r.test_acc.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "best epoch {} val {:.4} test {:.4} -> {}",
        fit.best_epoch,
        fit.best_val_acc,
        fit.test_acc,
        path.display()
    );
    Ok(())
}

fn cmd_prune(common: &Common, method: Option<Method>, rounds: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = method {
        cfg.methods = vec![m];
    }
    if rounds.is_some() {
        cfg.max_rounds = rounds;
    }
    let dir = out_dir(common, &cfg)?;
    let report = harness::execute_experiment(&cfg).map_err(describe)?;
    write_outputs(&report, &dir).map_err(describe)?;
    if let [run] = report.runs.as_slice() {
        if let Some(t) = &run.ticket {
            t.save(dir.join("ticket.glt"))?;
        }
    }
    for run in &report.runs {
        let last = run.records.last();
        println!(
            "{} seed {}: {} rounds, GS {:.4} WS {:.4}, final test {}",
            run.method,
            run.seed,
            last.map_or(0, |r| r.round),
            last.map_or(0.0, |r| r.graph_sparsity),
            last.map_or(0.0, |r| r.weight_sparsity),
            run.final_test_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
        );
    }
    let failed: Vec<String> = report
        .runs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} seed {}: {e}", r.method, r.seed)))
        .collect();
    if !failed.is_empty() {
        bail!("{} run(s) failed:\n  {}", failed.len(), failed.join("\n  "));
    }
    Ok(())
}

fn cmd_analyze(common: &Common, layers: usize) -> Result<()> {
    let graph = match (&common.dataset, &common.config) {
        (Some(dir), _) => {
            let (g, rep) = load_planetoid_dir(dir).map_err(|e| describe(e.into()))?;
            if rep.self_loops_dropped + rep.duplicates_dropped > 0 {
                eprintln!(
                    "dropped {} self-loops and {} duplicate edges",
                    rep.self_loops_dropped, rep.duplicates_dropped
                );
            }
            g
        }
        _ => {
            let cfg = load_config(common)?;
            cfg.load_graph(first_seed(&cfg)).map_err(describe)?
        }
    };
    let (count, frac) = edges_related_to_loss(&graph, layers)?;
    println!(
        "related edges: {count} of {} ({:.2}%) within {layers} layers of {} labeled nodes",
        graph.num_edges(),
        100.0 * frac,
        graph.split().train.len()
    );
    Ok(())
}

fn cmd_transfer(common: &Common, target: Option<&Path>, method: Option<Method>, head: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let tcfg = match target {
        Some(p) => ExperimentConfig::from_file(p).map_err(describe)?,
        None => cfg.clone(),
    };
    let heads = match head {
        "both" => vec![Head::ReplaceLast, Head::AddLayer],
        h => vec![h.parse::<Head>().map_err(anyhow::Error::msg)?],
    };
    let method = method.or(cfg.methods.first().copied()).unwrap_or(Method::Ours);
    let seed = first_seed(&cfg);
    let tseed = first_seed(&tcfg);
    let graph = cfg.load_graph(seed).map_err(describe)?;
    let params = cfg.init_params(&graph, seed).map_err(describe)?;
    let source = prepare_source(&graph, params, &cfg.prune_config(seed), method).map_err(describe)?;
    let target_graph = tcfg.load_graph(tseed).map_err(describe)?;
    let mut reports = Vec::new();
    for h in heads {
        let tc = TransferConfig {
            head: h,
            epochs: tcfg.retrain_epochs,
            lr: tcfg.eta2,
            normalization: tcfg.normalization,
            seed: tseed,
            hidden_dim: Some(tcfg.hidden_dim),
        };
        let rep = run_transfer(&source, &target_graph, &tc).map_err(describe)?;
        for c in &rep.curves {
            println!("{} {}: final test {:.4} (epoch {})", c.head, c.init, c.final_test_acc, c.best_epoch);
        }
        reports.push(rep);
    }
    let dir = out_dir(common, &cfg)?;
    let path = dir.join("transfer.csv");
    write_transfer_csv(&reports, &path).map_err(describe)?;
    println!("-> {}", path.display());
    Ok(())
}

fn cmd_wd_trace(common: &Common, epochs: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate().map_err(describe)?;
    let seed = first_seed(&cfg);
    let graph = cfg.load_graph(seed).map_err(describe)?;
    let mut params = cfg.init_params(&graph, seed).map_err(describe)?;
    let fit = FitConfig {
        epochs: epochs.unwrap_or(cfg.retrain_epochs),
        lr: cfg.eta2,
        normalization: cfg.normalization,
    };
    let rows = run_wd_trace(&graph, &mut params, &fit, &cfg.prune_config(seed).sinkhorn).map_err(describe)?;
    let dir = out_dir(common, &cfg)?;
    let path = dir.join("wd_trace.csv");
    write_trace_csv(&rows, &path).map_err(describe)?;
    let l0: Vec<f64> = rows.iter().map(|r| r.l0).collect();
    let wd: Vec<f64> = rows.iter().map(|r| r.wd).collect();
    println!("{} rows, pearson(L0, WD) = {:.4} -> {}", rows.len(), harness::pearson(&l0, &wd), path.display());
    Ok(())
}

fn cmd_report(input: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.map_or_else(|| input.join("comparison.csv"), Path::to_path_buf);
    let rows = harness::report(input, &out).map_err(describe)?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { common, epochs } => cmd_train(common, *epochs),
        Command::Prune { common, method, rounds } => cmd_prune(common, *method, *rounds),
        Command::AnalyzeEdges { common, layers } => cmd_analyze(common, *layers),
        Command::Transfer {
            common,
            target_config,
            method,
            head,
        } => cmd_transfer(common, target_config.as_deref(), *method, head),
        Command::WdTrace { common, epochs } => cmd_wd_trace(common, *epochs),
        Command::Report { input, out } => cmd_report(input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their causes in the message
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
