//! Wasserstein class-separation loss.
//!
//! Rows of the softmax output are split by predicted class. For every class
//! with a non-empty member set and a non-empty complement, the entropic
//! optimal transport cost between the two uniform point clouds (Euclidean
//! ground cost) is computed with Sinkhorn. The auxiliary loss is the
//! negated sum of these costs, so minimizing it pushes classes apart.

mod sinkhorn;

pub use sinkhorn::{sinkhorn_plan, SinkhornConfig, TransportPlan};

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{CustomOp, DenseMatrix, DiffError, Tape, Var};
use sinkhorn::SinkhornCostOp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("transport between an empty point set and another set is undefined")]
    EmptySide,
    #[error("epsilon {epsilon} is too small for costs up to {max_cost}; increase epsilon")]
    EpsilonTooSmall { epsilon: f64, max_cost: f64 },
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("invalid Sinkhorn config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Nodes grouped by predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    /// `members[c]`: rows whose argmax is `c`, ascending.
    pub members: Vec<Vec<usize>>,
    /// `rest[c]`: all other rows, ascending.
    pub rest: Vec<Vec<usize>>,
}

/// Argmax partition; ties go to the lowest class index.
pub fn partition_by_class(z: &DenseMatrix, num_classes: usize) -> ClassPartition {
    let mut members = vec![Vec::new(); num_classes];
    let mut rest = vec![Vec::new(); num_classes];
    for (i, c) in z.row_argmax().into_iter().enumerate() {
        for (k, (m, r)) in members.iter_mut().zip(rest.iter_mut()).enumerate() {
            if k == c {
                m.push(i);
            } else {
                r.push(i);
            }
        }
    }
    ClassPartition { members, rest }
}

/// `D[i][j] = |a_i - b_j|_2`.
pub fn pairwise_dist(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, OtError> {
    if a.cols() != b.cols() {
        return Err(DiffError::Shape(format!(
            "points of dimension {} and {}",
            a.cols(),
            b.cols()
        ))
        .into());
    }
    let mut d = DenseMatrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let s: f64 = a
                .row(i)
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d.set(i, j, s.sqrt());
        }
    }
    Ok(d)
}

struct PairwiseDistOp;

impl CustomOp for PairwiseDistOp {
    fn name(&self) -> &'static str {
        "pairwise_dist"
    }

    fn vjp(&self, inputs: &[&DenseMatrix], d: &DenseMatrix, grad: &DenseMatrix) -> Vec<DenseMatrix> {
        let (a, b) = (inputs[0], inputs[1]);
        let mut da = DenseMatrix::zeros(a.rows(), a.cols());
        let mut db = DenseMatrix::zeros(b.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let dij = d.get(i, j);
                if dij == 0.0 {
                    continue;
                }
                let w = grad.get(i, j) / dij;
                for k in 0..a.cols() {
                    let diff = w * (a.get(i, k) - b.get(j, k));
                    da.as_mut_slice()[i * a.cols() + k] += diff;
                    db.as_mut_slice()[j * b.cols() + k] -= diff;
                }
            }
        }
        vec![da, db]
    }
}

struct GatherRowsOp {
    rows: Vec<usize>,
}

impl CustomOp for GatherRowsOp {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn vjp(&self, inputs: &[&DenseMatrix], _out: &DenseMatrix, grad: &DenseMatrix) -> Vec<DenseMatrix> {
        let x = inputs[0];
        let mut dx = DenseMatrix::zeros(x.rows(), x.cols());
        for (k, &r) in self.rows.iter().enumerate() {
            for (o, g) in dx.row_mut(r).iter_mut().zip(grad.row(k)) {
                *o += g;
            }
        }
        vec![dx]
    }
}

/// Records `x[rows]`.
pub fn gather_rows_on(tape: &mut Tape, x: Var, rows: &[usize]) -> Var {
    let value = tape.value(x).select_rows(rows);
    tape.custom(&[x], value, Box::new(GatherRowsOp { rows: rows.to_vec() }))
}

/// Records the pairwise Euclidean distance matrix between the rows of `a` and `b`.
pub fn pairwise_dist_on(tape: &mut Tape, a: Var, b: Var) -> Result<Var, OtError> {
    let d = pairwise_dist(tape.value(a), tape.value(b))?;
    Ok(tape.custom(&[a, b], d, Box::new(PairwiseDistOp)))
}

/// Records the Sinkhorn transport cost of the cost-matrix node `d`.
pub fn sinkhorn_cost_on(tape: &mut Tape, d: Var, cfg: &SinkhornConfig) -> Result<Var, OtError> {
    let solve = sinkhorn::solve(tape.value(d), cfg, true)?;
    let cost = DenseMatrix::scalar(solve.plan.cost);
    Ok(tape.custom(
        &[d],
        cost,
        Box::new(SinkhornCostOp {
            eps: cfg.epsilon,
            f_hist: solve.f_hist,
            g_hist: solve.g_hist,
        }),
    ))
}

/// Uniform subsample of `idx` down to `cap` entries, order preserved.
/// Deterministic in (`seed`, `stream`).
pub fn subsample(idx: &[usize], cap: usize, seed: u64, stream: u64) -> Vec<usize> {
    if idx.len() <= cap {
        return idx.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked = index::sample(&mut rng, idx.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| idx[k]).collect()
}

/// Records the WD between the rows `left` and `right` of the point node `z`.
/// Each side is capped at `cfg.max_points`; `stream` decorrelates the
/// subsamples of different calls sharing a seed.
pub fn wd_cost_on(
    tape: &mut Tape,
    z: Var,
    left: &[usize],
    right: &[usize],
    cfg: &SinkhornConfig,
    stream: u64,
) -> Result<Var, OtError> {
    if left.is_empty() || right.is_empty() {
        return Err(OtError::EmptySide);
    }
    let left = subsample(left, cfg.max_points, cfg.seed, 2 * stream);
    let right = subsample(right, cfg.max_points, cfg.seed, 2 * stream + 1);
    let a = gather_rows_on(tape, z, &left);
    let b = gather_rows_on(tape, z, &right);
    let d = pairwise_dist_on(tape, a, b)?;
    sinkhorn_cost_on(tape, d, cfg)
}

/// WD between two point sets (rows), capped at `cfg.max_points` per side.
pub fn wd_cost(zc: &DenseMatrix, zcbar: &DenseMatrix, cfg: &SinkhornConfig) -> Result<f64, OtError> {
    if zc.rows() == 0 || zcbar.rows() == 0 {
        return Err(OtError::EmptySide);
    }
    let left = subsample(&(0..zc.rows()).collect::<Vec<_>>(), cfg.max_points, cfg.seed, 0);
    let right = subsample(&(0..zcbar.rows()).collect::<Vec<_>>(), cfg.max_points, cfg.seed, 1);
    let d = pairwise_dist(&zc.select_rows(&left), &zcbar.select_rows(&right))?;
    Ok(sinkhorn_plan(&d, cfg)?.cost)
}

/// Records `-sum_c WD(Z^c, Z^not c)`, skipping classes with an empty side.
/// Returns `None` when every class is skipped (the loss is then 0).
pub fn aux_loss_l1_on(
    tape: &mut Tape,
    z: Var,
    num_classes: usize,
    cfg: &SinkhornConfig,
) -> Result<Option<Var>, OtError> {
    let part = partition_by_class(tape.value(z), num_classes);
    let mut total: Option<Var> = None;
    for c in 0..num_classes {
        let (m, r) = (&part.members[c], &part.rest[c]);
        if m.is_empty() || r.is_empty() {
            continue;
        }
        let wd = wd_cost_on(tape, z, m, r, cfg, c as u64)?;
        total = Some(match total {
            None => wd,
            Some(t) => tape.add(t, wd)?,
        });
    }
    Ok(total.map(|t| tape.scale(t, -1.0)))
}

/// Value of the auxiliary loss for a fixed output matrix.
pub fn aux_loss_l1(z: &DenseMatrix, cfg: &SinkhornConfig) -> Result<f64, OtError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    Ok(aux_loss_l1_on(&mut tape, zv, z.cols(), cfg)?
        .map_or(0.0, |v| tape.value(v).as_slice()[0]))
}

/// Sum of per-class WD terms, i.e. `-aux_loss_l1`.
pub fn total_wd(z: &DenseMatrix, cfg: &SinkhornConfig) -> Result<f64, OtError> {
    aux_loss_l1(z, cfg).map(|l| -l)
}
