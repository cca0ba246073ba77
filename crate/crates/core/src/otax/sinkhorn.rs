//! Log-domain Sinkhorn between uniform empirical measures.
//!
//! With potentials `f` (rows) and `g` (columns), one iteration is
//!
//! ```text
//! f_i = eps ln a_i - eps LSE_j((g_j - D_ij) / eps)
//! g_j = eps ln b_j - eps LSE_i((f_i - D_ij) / eps)
//! P_ij = exp((f_i + g_j - D_ij) / eps)
//! ```
//!
//! After the `g` half-step the column marginals are exact, so convergence
//! is measured on the rows. The potentials of every iteration are kept so
//! the transport cost `<D, P>` can be differentiated through the unrolled
//! loop.

use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, DenseMatrix};

use super::OtError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Maximum marginal violation accepted as converged.
    pub tol: f64,
    /// Per-side cap on the number of points fed to the solver.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 100,
            tol: 1e-6,
            max_points: 256,
            seed: 0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<(), OtError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OtError::Config(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(OtError::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(OtError::Config(format!("tol {} must be > 0", self.tol)));
        }
        if self.max_points == 0 {
            return Err(OtError::Config("max_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: DenseMatrix,
    pub row_targets: Vec<f64>,
    pub col_targets: Vec<f64>,
    /// `<D, P>` of the final plan.
    pub cost: f64,
    /// `<D, P>` after every iteration.
    pub cost_trace: Vec<f64>,
    /// Dual objective `<f, a> + <g, b>` after every iteration; non-decreasing.
    pub dual_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute row or column marginal error of the final plan.
    pub marginal_violation: f64,
}

pub(crate) struct Solve {
    pub plan: TransportPlan,
    pub f_hist: Vec<Vec<f64>>,
    pub g_hist: Vec<Vec<f64>>,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn plan_from(d: &DenseMatrix, f: &[f64], g: &[f64], eps: f64) -> DenseMatrix {
    let (n, m) = d.shape();
    let mut p = DenseMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            p.set(i, j, ((f[i] + g[j] - d.get(i, j)) / eps).exp());
        }
    }
    p
}

fn marginal_errors(p: &DenseMatrix, a: f64, b: f64) -> (f64, f64) {
    let (n, m) = p.shape();
    let mut row = 0.0_f64;
    for i in 0..n {
        row = row.max((p.row(i).iter().sum::<f64>() - a).abs());
    }
    let mut col = 0.0_f64;
    for j in 0..m {
        let s: f64 = (0..n).map(|i| p.get(i, j)).sum();
        col = col.max((s - b).abs());
    }
    (row, col)
}

/// `keep_history` records the potentials of every iteration for the
/// backward pass; forward-only callers skip it.
pub(crate) fn solve(d: &DenseMatrix, cfg: &SinkhornConfig, keep_history: bool) -> Result<Solve, OtError> {
    cfg.validate()?;
    let (n, m) = d.shape();
    if n == 0 || m == 0 {
        return Err(OtError::EmptySide);
    }
    if d.as_slice().iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(OtError::InvalidCost(
            "distances must be finite and non-negative".into(),
        ));
    }
    let eps = cfg.epsilon;
    let scaled_max = d.max_abs() / eps;
    if !scaled_max.is_finite() {
        return Err(OtError::EpsilonTooSmall {
            epsilon: eps,
            max_cost: d.max_abs(),
        });
    }
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let (ln_a, ln_b) = (a.ln(), b.ln());

    let mut g = vec![0.0; m];
    let mut f = vec![0.0; n];
    let mut f_hist = Vec::new();
    let mut g_hist = Vec::new();
    let mut cost_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut converged = false;
    let mut plan = DenseMatrix::zeros(n, m);
    let mut violation = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        for (i, fi) in f.iter_mut().enumerate() {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - d.get(i, j)) / eps));
            *fi = eps * ln_a - eps * lse;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - d.get(i, j)) / eps));
            *gj = eps * ln_b - eps * lse;
        }
        iterations += 1;
        if keep_history {
            f_hist.push(f.clone());
            g_hist.push(g.clone());
        }
        plan = plan_from(d, &f, &g, eps);
        if !plan.is_finite() {
            return Err(OtError::EpsilonTooSmall {
                epsilon: eps,
                max_cost: d.max_abs(),
            });
        }
        cost_trace.push(plan.hadamard(d).expect("same shape").sum());
        // after the g half-step the plan has unit mass, so the entropic term vanishes
        dual_trace.push(a * f.iter().sum::<f64>() + b * g.iter().sum::<f64>());
        let (row, col) = marginal_errors(&plan, a, b);
        violation = row.max(col);
        if violation <= cfg.tol {
            converged = true;
            break;
        }
    }
    let cost = *cost_trace.last().expect("at least one iteration");
    Ok(Solve {
        plan: TransportPlan {
            plan,
            row_targets: vec![a; n],
            col_targets: vec![b; m],
            cost,
            cost_trace,
            dual_trace,
            iterations,
            converged,
            marginal_violation: violation,
        },
        f_hist,
        g_hist,
    })
}

/// Entropic transport plan between uniform measures on the rows and
/// columns of the cost matrix `d`.
pub fn sinkhorn_plan(d: &DenseMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan, OtError> {
    solve(d, cfg, false).map(|s| s.plan)
}

/// Tape primitive: `D -> <D, P(D)>` through the recorded iterations.
pub(crate) struct SinkhornCostOp {
    pub eps: f64,
    pub f_hist: Vec<Vec<f64>>,
    pub g_hist: Vec<Vec<f64>>,
}

impl CustomOp for SinkhornCostOp {
    fn name(&self) -> &'static str {
        "sinkhorn_cost"
    }

    fn vjp(&self, inputs: &[&DenseMatrix], _output: &DenseMatrix, grad: &DenseMatrix) -> Vec<DenseMatrix> {
        let d = inputs[0];
        let (n, m) = d.shape();
        let eps = self.eps;
        let scale = grad.as_slice()[0];
        let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
        let k_last = self.f_hist.len() - 1;

        let p = plan_from(d, &self.f_hist[k_last], &self.g_hist[k_last], eps);
        let mut d_bar = DenseMatrix::zeros(n, m);
        let mut f_bar = vec![0.0; n];
        let mut g_bar = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let (dij, pij) = (d.get(i, j), p.get(i, j));
                d_bar.set(i, j, pij - dij * pij / eps);
                f_bar[i] += dij * pij / eps;
                g_bar[j] += dij * pij / eps;
            }
        }

        for k in (0..=k_last).rev() {
            let f = &self.f_hist[k];
            let g = &self.g_hist[k];
            // g^k = eps ln b - eps LSE_i((f^k_i - D_ij)/eps); weights over i sum to 1 per column
            for i in 0..n {
                for j in 0..m {
                    let w = ((f[i] + g[j] - d.get(i, j)) / eps).exp() / b;
                    f_bar[i] -= g_bar[j] * w;
                    d_bar.as_mut_slice()[i * m + j] += g_bar[j] * w;
                }
            }
            // f^k = eps ln a - eps LSE_j((g^{k-1}_j - D_ij)/eps); g^0 = 0
            let g_prev: Vec<f64> = if k == 0 {
                vec![0.0; m]
            } else {
                self.g_hist[k - 1].clone()
            };
            let mut g_prev_bar = vec![0.0; m];
            for i in 0..n {
                for j in 0..m {
                    let w = ((f[i] + g_prev[j] - d.get(i, j)) / eps).exp() / a;
                    g_prev_bar[j] -= f_bar[i] * w;
                    d_bar.as_mut_slice()[i * m + j] += f_bar[i] * w;
                }
            }
            f_bar.iter_mut().for_each(|x| *x = 0.0);
            g_bar = g_prev_bar;
        }
        vec![d_bar.scale(scale)]
    }
}
