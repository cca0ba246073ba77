//! Graph lottery tickets for GCNs.
//!
//! Finds sparse (graph, sub-network, initialization) triples by iterative
//! magnitude pruning of an edge mask and a weight mask. Mask training is a
//! min-max game: projected gradient ascent perturbs the edge mask while the
//! weights and weight mask descend on the supervised cross-entropy plus a
//! Wasserstein class-separation term computed with log-domain Sinkhorn.
//!
//! Module map:
//! - [`diffcore`]: reverse-mode tape, dense and edge-masked sparse ops.
//! - [`graphio`]: graph model, loaders, SBM generator, masked normalization.
//! - [`gnn`]: the bias-free GCN and its losses.
//! - [`otax`]: class partition, pairwise distances, Sinkhorn, the WD loss.
//! - [`pruner`]: masks, min-max steps, iterative pruning, baselines, tickets.
//! - [`harness`]: metrics, experiment sweeps, transfer, traces, reports.

pub mod diffcore;
pub mod gnn;
pub mod graphio;
pub mod harness;
pub mod otax;
pub mod pruner;
