//! Ticket state and its text archive.
//!
//! The archive is line oriented. Each line starts with a keyword:
//!
//! ```text
//! GLT-TICKET 1
//! method ours
//! round 2
//! config {"p_g":5.0,...}
//! edges 4
//! edge_pruned_round 0 2 0 1
//! layers 2
//! layer 0 2 3
//! theta0 0.5 -0.25 1.0 0.0 0.125 -1.5
//! weight_pruned_round 0 0 1 0 0 2
//! layer 1 3 2
//! ...
//! history 3
//! {"round":0,...}
//! end
//! ```
//!
//! `*_pruned_round` holds, per entry, the round that froze it (0 = alive),
//! so the frozen bitmap of any past round can be recovered. Floats are
//! written in shortest round-trip form, which makes save, load, save
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::DenseMatrix;
use crate::gnn::WeightMask;

use super::{EdgeMask, Method, PruneConfig, PruneError};

pub const ARCHIVE_MAGIC: &str = "GLT-TICKET 1";

/// Metrics of one round, measured after pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub graph_sparsity: f64,
    pub weight_sparsity: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub pruned_edges: usize,
    pub pruned_weights: usize,
    /// Training loss at the last mask-training iteration of the round.
    pub final_loss: Option<f64>,
    pub hvp_fallbacks: usize,
}

/// A graph lottery ticket: masks, initialization and history.
#[derive(Debug, Clone, PartialEq)]
pub struct TicketState {
    pub method: Method,
    pub config: PruneConfig,
    pub edge_mask: EdgeMask,
    pub weight_mask: WeightMask,
    theta0: Vec<DenseMatrix>,
    /// Rounds completed.
    pub round: usize,
    pub history: Vec<RoundRecord>,
    edge_pruned_round: Vec<u32>,
    weight_pruned_round: Vec<Vec<u32>>,
}

impl TicketState {
    pub fn new(
        method: Method,
        config: PruneConfig,
        edge_mask: EdgeMask,
        weight_mask: WeightMask,
        theta0: Vec<DenseMatrix>,
    ) -> Self {
        let edge_pruned_round = edge_mask.frozen.iter().map(|&f| u32::from(f)).collect();
        let weight_pruned_round = weight_mask
            .frozen
            .iter()
            .map(|l| l.iter().map(|&f| u32::from(f)).collect())
            .collect();
        Self {
            method,
            config,
            edge_mask,
            weight_mask,
            theta0,
            round: 0,
            history: Vec::new(),
            edge_pruned_round,
            weight_pruned_round,
        }
    }

    pub fn theta0(&self) -> &[DenseMatrix] {
        &self.theta0
    }

    pub fn graph_sparsity(&self) -> f64 {
        self.edge_mask.sparsity()
    }

    pub fn weight_sparsity(&self) -> f64 {
        let total = self.weight_mask.total();
        if total == 0 {
            0.0
        } else {
            1.0 - self.weight_mask.surviving() as f64 / total as f64
        }
    }

    pub fn edge_pruned_round(&self) -> &[u32] {
        &self.edge_pruned_round
    }

    pub fn weight_pruned_round(&self) -> &[Vec<u32>] {
        &self.weight_pruned_round
    }

    /// Stamps entries frozen since the last call with `round`.
    pub(crate) fn stamp(&mut self, round: usize) {
        let r = round as u32;
        for (s, &f) in self.edge_pruned_round.iter_mut().zip(&self.edge_mask.frozen) {
            if f && *s == 0 {
                *s = r;
            }
        }
        for (sl, fl) in self.weight_pruned_round.iter_mut().zip(&self.weight_mask.frozen) {
            for (s, &f) in sl.iter_mut().zip(fl) {
                if f && *s == 0 {
                    *s = r;
                }
            }
        }
    }

    /// Graph and weight sparsity right after `round` (0 = before pruning).
    pub fn sparsity_at(&self, round: usize) -> (f64, f64) {
        let frac = |stamps: &mut dyn Iterator<Item = u32>| {
            let (mut n, mut hit) = (0usize, 0usize);
            for s in stamps {
                n += 1;
                if s != 0 && s as usize <= round {
                    hit += 1;
                }
            }
            if n == 0 {
                0.0
            } else {
                1.0 - (n - hit) as f64 / n as f64
            }
        };
        (
            frac(&mut self.edge_pruned_round.iter().copied()),
            frac(&mut self.weight_pruned_round.iter().flatten().copied()),
        )
    }

    /// Serializes the ticket; continuous mask values are not stored.
    pub fn to_archive(&self) -> String {
        let mut s = String::new();
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
        let line = |s: &mut String, key: &str, body: String| {
            if body.is_empty() {
                let _ = writeln!(s, "{key}");
            } else {
                let _ = writeln!(s, "{key} {body}");
            }
        };
        let _ = writeln!(s, "{ARCHIVE_MAGIC}");
        let _ = writeln!(s, "method {}", self.method);
        let _ = writeln!(s, "round {}", self.round);
        let _ = writeln!(
            s,
            "config {}",
            serde_json::to_string(&self.config).expect("config serializes")
        );
        let _ = writeln!(s, "edges {}", self.edge_pruned_round.len());
        line(
            &mut s,
            "edge_pruned_round",
            join(&mut self.edge_pruned_round.iter().map(u32::to_string)),
        );
        let _ = writeln!(s, "layers {}", self.theta0.len());
        for (l, w) in self.theta0.iter().enumerate() {
            let _ = writeln!(s, "layer {l} {} {}", w.rows(), w.cols());
            line(&mut s, "theta0", join(&mut w.as_slice().iter().map(|x| format!("{x:?}"))));
            line(
                &mut s,
                "weight_pruned_round",
                join(&mut self.weight_pruned_round[l].iter().map(u32::to_string)),
            );
        }
        let _ = writeln!(s, "history {}", self.history.len());
        for r in &self.history {
            let _ = writeln!(s, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn from_archive(text: &str) -> Result<Self, PruneError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |key: &str| -> Result<(usize, String), PruneError> {
            let (n, l) = lines.next().ok_or(PruneError::Archive {
                line: 0,
                msg: format!("unexpected end of archive, expected {key:?}"),
            })?;
            let rest = if key.is_empty() {
                Some(l)
            } else {
                l.strip_prefix(key)
                    .filter(|r| r.is_empty() || r.starts_with(' '))
                    .map(|r| r.strip_prefix(' ').unwrap_or(r))
            };
            match rest {
                Some(r) => Ok((n, r.to_string())),
                None => Err(PruneError::Archive {
                    line: n,
                    msg: format!("expected {key:?}"),
                }),
            }
        };
        fn parse<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, PruneError> {
            s.parse().map_err(|_| PruneError::Archive {
                line,
                msg: format!("cannot parse {s:?}"),
            })
        }
        fn parse_all<T: std::str::FromStr>(line: usize, s: &str, n: usize) -> Result<Vec<T>, PruneError> {
            let v: Vec<T> = s
                .split_whitespace()
                .map(|t| parse(line, t))
                .collect::<Result<_, _>>()?;
            if v.len() != n {
                return Err(PruneError::Archive {
                    line,
                    msg: format!("expected {n} values, found {}", v.len()),
                });
            }
            Ok(v)
        }

        let (n, magic) = next("")?;
        if magic != ARCHIVE_MAGIC {
            return Err(PruneError::Archive {
                line: n,
                msg: format!("not a ticket archive (header {magic:?})"),
            });
        }
        let (n, m) = next("method")?;
        let method: Method = m.parse().map_err(|_| PruneError::Archive {
            line: n,
            msg: format!("unknown method {m:?}"),
        })?;
        let (n, r) = next("round")?;
        let round: usize = parse(n, &r)?;
        let (n, c) = next("config")?;
        let config: PruneConfig = serde_json::from_str(&c).map_err(|e| PruneError::Archive {
            line: n,
            msg: e.to_string(),
        })?;
        let (n, e) = next("edges")?;
        let num_edges: usize = parse(n, &e)?;
        let (n, e) = next("edge_pruned_round")?;
        let edge_pruned_round: Vec<u32> = parse_all(n, &e, num_edges)?;
        let (n, l) = next("layers")?;
        let num_layers: usize = parse(n, &l)?;
        let mut theta0 = Vec::with_capacity(num_layers);
        let mut weight_pruned_round = Vec::with_capacity(num_layers);
        for layer in 0..num_layers {
            let (n, header) = next("layer")?;
            let dims: Vec<usize> = parse_all(n, &header, 3)?;
            if dims[0] != layer {
                return Err(PruneError::Archive {
                    line: n,
                    msg: format!("expected layer {layer}, found {}", dims[0]),
                });
            }
            let (n, t) = next("theta0")?;
            let values: Vec<f64> = parse_all(n, &t, dims[1] * dims[2])?;
            theta0.push(DenseMatrix::from_vec(dims[1], dims[2], values).map_err(|e| {
                PruneError::Archive {
                    line: n,
                    msg: e.to_string(),
                }
            })?);
            let (n, p) = next("weight_pruned_round")?;
            weight_pruned_round.push(parse_all::<u32>(n, &p, dims[1] * dims[2])?);
        }
        let (n, h) = next("history")?;
        let count: usize = parse(n, &h)?;
        let mut history = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, rec) = next("")?;
            history.push(serde_json::from_str(&rec).map_err(|e| PruneError::Archive {
                line: n,
                msg: e.to_string(),
            })?);
        }
        next("end")?;

        let edge_frozen: Vec<bool> = edge_pruned_round.iter().map(|&s| s != 0).collect();
        let edge_mask = EdgeMask {
            values: edge_frozen.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect(),
            frozen: edge_frozen,
        };
        let frozen: Vec<Vec<bool>> = weight_pruned_round
            .iter()
            .map(|l| l.iter().map(|&s| s != 0).collect())
            .collect();
        let values = theta0
            .iter()
            .zip(&frozen)
            .map(|(w, f)| {
                let data = f.iter().map(|&x| if x { 0.0 } else { 1.0 }).collect();
                DenseMatrix::from_vec(w.rows(), w.cols(), data).expect("sized")
            })
            .collect();
        Ok(Self {
            method,
            config,
            edge_mask,
            weight_mask: WeightMask { values, frozen },
            theta0,
            round,
            history,
            edge_pruned_round,
            weight_pruned_round,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PruneError> {
        std::fs::write(path, self.to_archive())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PruneError> {
        Self::from_archive(&std::fs::read_to_string(path)?)
    }
}
