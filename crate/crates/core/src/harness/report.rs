use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, SummaryFile};

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub round: usize,
    /// Directory of the contributing `summary.json`, relative to the input.
    pub source: String,
    pub n: usize,
    pub graph_sparsity: f64,
    pub weight_sparsity: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub val_acc_mean: f64,
    pub macs_mean: f64,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `summary.json` below `dir`, labelled by its parent directory
/// relative to `dir` (`.` for the top level).
pub fn collect_summaries(dir: &Path) -> Result<Vec<(String, SummaryFile)>, HarnessError> {
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            let summary: SummaryFile = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
                path: p.clone(),
                msg: e.to_string(),
            })?;
            let parent = p.parent().unwrap_or(dir);
            let rel = parent.strip_prefix(dir).unwrap_or(parent);
            let label = if rel.as_os_str().is_empty() {
                ".".to_string()
            } else {
                rel.to_string_lossy().into_owned()
            };
            Ok((label, summary))
        })
        .collect()
}

/// Flattens summaries into rows sorted by (method, round, source), so the
/// table does not depend on the order the summaries are given in.
pub fn build_comparison(summaries: &[(String, SummaryFile)]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = summaries
        .iter()
        .flat_map(|(label, s)| {
            s.methods.iter().flat_map(move |(method, m)| {
                m.rounds.iter().map(move |r| ComparisonRow {
                    method: method.clone(),
                    round: r.round,
                    source: label.clone(),
                    n: r.n,
                    graph_sparsity: r.graph_sparsity.mean,
                    weight_sparsity: r.weight_sparsity.mean,
                    test_acc_mean: r.test_acc.mean,
                    test_acc_std: r.test_acc.std,
                    val_acc_mean: r.val_acc.mean,
                    macs_mean: r.macs.mean,
                })
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.method, a.round, &a.source).cmp(&(&b.method, b.round, &b.source))
    });
    rows
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<(), HarnessError> {
    let fmt = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(io_err(path))
}

/// Aggregates every summary below `in_dir` into `out` (a CSV file).
pub fn report(in_dir: &Path, out: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    let summaries = collect_summaries(in_dir)?;
    if summaries.is_empty() {
        return Err(HarnessError::Config(format!(
            "no summary.json found under {}",
            in_dir.display()
        )));
    }
    let rows = build_comparison(&summaries);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_comparison(&rows, out)?;
    Ok(rows)
}
