//! Graph lottery ticket search.
//!
//! Each round trains the edge mask `m_g`, the weight mask `m_θ` and the
//! weights `Θ` for `T` iterations, then freezes the lowest-scored mask
//! entries and rewinds `Θ` to its initialization. Our method plays a min-max
//! game: projected gradient ascent on `m_g` followed by descent on `m_θ` and
//! `Θ` that also differentiates through the ascent step (the α-term). The UGS
//! baseline descends on all three jointly; the random baseline freezes
//! entries uniformly at random.

mod prune;
mod run;
mod steps;
mod ticket;

pub use prune::{magnitude_prune, magnitude_prune_ranked, prune_count, random_prune};
pub use run::{
    baseline_random_prune, baseline_ugs_round, initial_masks, probe, retrain_final, rewind,
    run_iterative, run_iterative_from, run_iterative_observed, run_round, FinalResult, PruneFailure, RoundLog,
};
pub use steps::{
    inner_ascent_step, outer_descent_step, project_unit_interval, ugs_descent_step, AscentStep,
    DescentStep, GraphObjective, Objective, ObjectiveEval, StepSizes, UgsStep,
};
pub use ticket::{RoundRecord, TicketState, ARCHIVE_MAGIC};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::DiffError;
use crate::gnn::GnnError;
use crate::graphio::Normalization;
use crate::otax::SinkhornConfig;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("non-finite {what} at round {round}, iteration {iteration}")]
    NonFinite {
        what: String,
        round: usize,
        iteration: usize,
    },
    #[error("nothing left to prune: every entry is already frozen")]
    NothingToPrune,
    #[error("invalid prune config: {0}")]
    Config(String),
    #[error("ticket archive line {line}: {msg}")]
    Archive { line: usize, msg: String },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Continuous edge scores plus permanently pruned flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl EdgeMask {
    pub fn ones(num_edges: usize) -> Self {
        Self {
            values: vec![1.0; num_edges],
            frozen: vec![false; num_edges],
        }
    }

    /// All ones minus uniform noise in `[0, noise]`.
    pub fn with_noise(num_edges: usize, noise: f64, rng: &mut impl Rng) -> Self {
        let mut m = Self::ones(num_edges);
        if noise > 0.0 {
            for v in &mut m.values {
                *v -= rng.random_range(0.0..=noise);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn surviving(&self) -> usize {
        self.frozen.iter().filter(|&&f| !f).count()
    }

    /// `1 - surviving / total`; 0 for an edgeless graph.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            1.0 - self.surviving() as f64 / self.len() as f64
        }
    }

    /// Frozen entries hold exactly 0; the rest lie in `[0, 1]`.
    pub fn check_invariants(&self) -> bool {
        self.values
            .iter()
            .zip(&self.frozen)
            .all(|(&x, &f)| if f { x == 0.0 } else { (0.0..=1.0).contains(&x) })
    }

    /// Surviving edges set to 1, frozen ones to 0.
    pub fn binarized(&self) -> Vec<f64> {
        self.frozen.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect()
    }
}

/// Mask training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Min-max training with the Wasserstein term.
    #[serde(rename = "ours")]
    Ours,
    /// Joint descent on the supervised loss.
    #[serde(rename = "ugs")]
    Ugs,
    /// Joint descent on the supervised loss plus the Wasserstein term.
    #[serde(rename = "ugs+wd")]
    UgsWd,
    /// Uniformly random freezing, no mask training.
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::Ugs, Method::UgsWd, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Ugs => "ugs",
            Method::UgsWd => "ugs+wd",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                PruneError::Config(format!(
                    "unknown method {s:?}; expected one of ours, ugs, ugs+wd, random"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Percent of the remaining edges frozen per round.
    pub p_g: f64,
    /// Percent of the remaining weights frozen per round.
    pub p_theta: f64,
    /// Target graph sparsity.
    pub s_g: f64,
    /// Target weight sparsity.
    pub s_theta: f64,
    pub lambda: f64,
    /// Step size on the edge mask.
    pub eta1: f64,
    /// Step size on the weight mask and the weights.
    pub eta2: f64,
    /// Weight of the implicit gradient through the ascent step.
    pub alpha: f64,
    /// Mask-training iterations per round.
    pub t_inner: usize,
    pub retrain_epochs: usize,
    /// Epochs of the per-round accuracy probe.
    pub probe_epochs: usize,
    pub mask_init_noise: f64,
    pub seed: u64,
    /// Hard cap on the number of rounds.
    pub max_rounds: Option<usize>,
    pub normalization: Normalization,
    pub sinkhorn: SinkhornConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            p_g: 5.0,
            p_theta: 20.0,
            s_g: 0.58,
            s_theta: 0.975,
            lambda: 0.1,
            eta1: 1e-2,
            eta2: 1e-2,
            alpha: 0.1,
            t_inner: 200,
            retrain_epochs: 200,
            probe_epochs: 50,
            mask_init_noise: 1e-5,
            seed: 0,
            max_rounds: None,
            normalization: Normalization::default(),
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |msg: String| Err(PruneError::Config(msg));
        for (name, p) in [("p_g", self.p_g), ("p_theta", self.p_theta)] {
            if !(p > 0.0 && p < 100.0) {
                return bad(format!("{name} = {p} must lie in (0, 100)"));
            }
        }
        for (name, s) in [("s_g", self.s_g), ("s_theta", self.s_theta)] {
            if !(s > 0.0 && s < 1.0) {
                return bad(format!("{name} = {s} must lie in (0, 1)"));
            }
        }
        for (name, e) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("{name} = {e} must be > 0"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be >= 0", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be >= 0", self.lambda));
        }
        if !(self.mask_init_noise >= 0.0 && self.mask_init_noise < 1.0) {
            return bad(format!("mask_init_noise = {} must lie in [0, 1)", self.mask_init_noise));
        }
        self.sinkhorn
            .validate()
            .map_err(|e| PruneError::Config(e.to_string()))
    }
}
