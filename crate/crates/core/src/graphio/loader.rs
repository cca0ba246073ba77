//! Plain-text dataset directories.
//!
//! A dataset directory holds four files:
//!
//! - `edges.txt`: one undirected edge per line, two whitespace-separated node ids.
//! - `features.csv`: one comma-separated row of reals per node, no header.
//! - `labels.csv`: one integer class id per line, in node order.
//! - `split.csv`: lines of `train,<id>`, `val,<id>` or `test,<id>`.
//!
//! Blank lines and lines starting with `#` are ignored everywhere. The node
//! count is the number of feature rows. Self-loops and repeated edges (in
//! either orientation) are dropped and counted in the [`LoadReport`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffcore::DenseMatrix;

use super::{Graph, GraphError, Split};

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    /// Non-empty lines in the edge file.
    pub edge_lines: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|e| GraphError::MissingFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_id(path: &Path, line: usize, tok: &str, n: usize) -> Result<usize, GraphError> {
    let id: usize = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{tok}` is not a node id")))?;
    if id >= n {
        return Err(GraphError::OutOfRange {
            path: path.to_path_buf(),
            line,
            id,
            n,
        });
    }
    Ok(id)
}

fn load_features(path: &Path) -> Result<DenseMatrix, GraphError> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in content_lines(&text) {
        let row = l
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("`{}` is not a real", t.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(GraphError::Ragged {
                    path: path.to_path_buf(),
                    line,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Ok(DenseMatrix::from_rows(&rows)?)
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<usize>, GraphError> {
    let text = read(path)?;
    let mut labels = Vec::with_capacity(n);
    let mut last_line = 0;
    for (line, l) in content_lines(&text) {
        last_line = line;
        let v: usize = l
            .parse()
            .map_err(|_| parse_err(path, line, format!("`{l}` is not a class id")))?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(GraphError::Ragged {
            path: path.to_path_buf(),
            line: last_line,
            expected: n,
            found: labels.len(),
        });
    }
    Ok(labels)
}

fn load_split(path: &Path, n: usize) -> Result<Split, GraphError> {
    let text = read(path)?;
    let mut split = Split::default();
    for (line, l) in content_lines(&text) {
        let mut parts = l.split(',').map(str::trim);
        let (Some(kind), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line, "expected `<train|val|test>,<id>`"));
        };
        let id = parse_id(path, line, id, n)?;
        match kind {
            "train" => split.train.push(id),
            "val" => split.val.push(id),
            "test" => split.test.push(id),
            other => return Err(parse_err(path, line, format!("unknown split `{other}`"))),
        }
    }
    Ok(split)
}

fn load_edges(path: &Path, n: usize) -> Result<(Vec<(usize, usize)>, LoadReport), GraphError> {
    let text = read(path)?;
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        report.edge_lines += 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(GraphError::Ragged {
                path: path.to_path_buf(),
                line,
                expected: 2,
                found: toks.len(),
            });
        }
        let a = parse_id(path, line, toks[0], n)?;
        let b = parse_id(path, line, toks[1], n)?;
        if a == b {
            report.self_loops_dropped += 1;
            continue;
        }
        let e = (a.min(b), a.max(b));
        if seen.insert(e) {
            edges.push(e);
        } else {
            report.duplicates_dropped += 1;
        }
    }
    Ok((edges, report))
}

/// Loads a dataset directory (see module docs for the layout).
pub fn load_planetoid_dir(dir: impl AsRef<Path>) -> Result<(Graph, LoadReport), GraphError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(GraphError::MissingFile {
            path: dir.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let features = load_features(&file(FEATURES_FILE))?;
    let n = features.rows();
    let labels = load_labels(&file(LABELS_FILE), n)?;
    let (edges, report) = load_edges(&file(EDGES_FILE), n)?;
    let split = load_split(&file(SPLIT_FILE), n)?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let graph = Graph::new(edges, features, labels, num_classes, split)?;
    Ok((graph, report))
}

/// Writes a graph in the directory layout read by [`load_planetoid_dir`].
pub fn write_planetoid_dir(graph: &Graph, dir: impl AsRef<Path>) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for &(i, j) in graph.edges() {
        let _ = writeln!(edges, "{i} {j}");
    }
    fs::write(dir.join(EDGES_FILE), edges)?;
    let mut feats = String::new();
    for r in 0..graph.num_nodes() {
        let row: Vec<String> = graph.features().row(r).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(feats, "{}", row.join(","));
    }
    fs::write(dir.join(FEATURES_FILE), feats)?;
    let mut labels = String::new();
    for l in graph.labels() {
        let _ = writeln!(labels, "{l}");
    }
    fs::write(dir.join(LABELS_FILE), labels)?;
    let mut split = String::new();
    let s = graph.split();
    for (name, set) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        for id in set {
            let _ = writeln!(split, "{name},{id}");
        }
    }
    fs::write(dir.join(SPLIT_FILE), split)
}
