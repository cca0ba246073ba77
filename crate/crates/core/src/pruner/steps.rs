use crate::diffcore::{hvp_cross, DenseMatrix, DiffError};
use crate::gnn::{evaluate, GcnParams, LossEval, LossSpec, WeightMask};
use crate::graphio::Graph;

use super::{EdgeMask, PruneError};

/// Loss value and gradients at a point `(m_g, m_θ, Θ)`.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub loss: f64,
    pub grad_edge: Vec<f64>,
    pub grad_wmask: Vec<DenseMatrix>,
    pub grad_weights: Vec<DenseMatrix>,
}

impl From<LossEval> for ObjectiveEval {
    fn from(e: LossEval) -> Self {
        Self {
            loss: e.loss,
            grad_edge: e.grad_edge,
            grad_wmask: e.grad_wmask,
            grad_weights: e.grad_weights,
        }
    }
}

impl ObjectiveEval {
    fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.grad_edge.iter().all(|g| g.is_finite())
            && self.grad_wmask.iter().all(DenseMatrix::is_finite)
            && self.grad_weights.iter().all(DenseMatrix::is_finite)
    }

    /// `[grad_wmask..., grad_weights...]` flattened.
    fn theta_block(&self) -> Vec<f64> {
        self.grad_wmask
            .iter()
            .chain(&self.grad_weights)
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }
}

/// Anything the min-max steps can be run against.
pub trait Objective {
    fn evaluate(
        &self,
        edge: &[f64],
        wmask: &[DenseMatrix],
        weights: &[DenseMatrix],
    ) -> Result<ObjectiveEval, PruneError>;
}

/// `L0 + lambda * L1` of a GCN on a graph.
pub struct GraphObjective<'a> {
    pub graph: &'a Graph,
    pub spec: LossSpec,
}

impl Objective for GraphObjective<'_> {
    fn evaluate(
        &self,
        edge: &[f64],
        wmask: &[DenseMatrix],
        weights: &[DenseMatrix],
    ) -> Result<ObjectiveEval, PruneError> {
        Ok(evaluate(self.graph, edge, wmask, weights, &self.spec)?.into())
    }
}

/// Clamps unfrozen values to `[0, 1]` (the Frobenius projection onto the
/// box); frozen values stay 0.
pub fn project_unit_interval(mask: &mut EdgeMask) {
    for (v, &f) in mask.values.iter_mut().zip(&mask.frozen) {
        *v = if f { 0.0 } else { v.clamp(0.0, 1.0) };
    }
}

/// Outcome of one projected ascent step on the edge mask.
#[derive(Debug, Clone)]
pub struct AscentStep {
    /// Evaluation at the pre-step edge mask.
    pub eval: ObjectiveEval,
    /// Edge mask before the step.
    pub before: Vec<f64>,
    /// Edges where the projection was inactive (clamp derivative 1).
    pub active: Vec<bool>,
    /// Unprojected update applied to each edge (0 on frozen edges).
    pub delta: Vec<f64>,
}

/// `m_g <- clamp(m_g + eta1 * grad)` on unfrozen edges.
pub fn inner_ascent_step(
    obj: &dyn Objective,
    edge: &mut EdgeMask,
    wmask: &WeightMask,
    params: &GcnParams,
    eta1: f64,
) -> Result<AscentStep, PruneError> {
    let eval = obj.evaluate(&edge.values, &wmask.values, params.weights())?;
    if !eval.is_finite() {
        return Err(non_finite("gradient in the ascent step"));
    }
    let before = edge.values.clone();
    let mut active = vec![false; edge.len()];
    let mut delta = vec![0.0; edge.len()];
    for (k, (v, &f)) in edge.values.iter_mut().zip(&edge.frozen).enumerate() {
        if f {
            continue;
        }
        delta[k] = eta1 * eval.grad_edge[k];
        let raw = *v + delta[k];
        active[k] = (0.0..=1.0).contains(&raw);
        *v = raw;
    }
    project_unit_interval(edge);
    Ok(AscentStep {
        eval,
        before,
        active,
        delta,
    })
}

/// Outcome of one descent step on the weight mask and weights.
#[derive(Debug, Clone)]
pub struct DescentStep {
    /// Loss at the advanced edge mask, before the update.
    pub loss: f64,
    /// True when the implicit term was dropped for a non-finite product.
    pub hvp_fallback: bool,
    /// Unprojected update applied to each weight-mask entry, flattened.
    pub wmask_delta: Vec<f64>,
}

/// Step sizes of one min-max iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta1: f64,
    pub eta2: f64,
    pub alpha: f64,
}

/// Descent on `m_θ` and `Θ` at the advanced edge mask, including
/// `alpha * d[m_g^(t+1)]/d(.)^T grad_{m_g} L`.
///
/// The ascent map is `m_g + eta1 * grad_{m_g} L` through the clamp, so its
/// Jacobian with respect to `(m_θ, Θ)` is `eta1 * diag(active) * H_gθ`. The
/// product with `v = active ⊙ grad_{m_g} L` equals the derivative of the
/// `(m_θ, Θ)` gradient along `v` in edge-mask space, which is taken by a
/// forward finite difference around the pre-step mask.
pub fn outer_descent_step(
    obj: &dyn Objective,
    edge: &EdgeMask,
    ascent: &AscentStep,
    wmask: &mut WeightMask,
    params: &mut GcnParams,
    steps: StepSizes,
) -> Result<DescentStep, PruneError> {
    let eval = obj.evaluate(&edge.values, &wmask.values, params.weights())?;
    if !eval.is_finite() {
        return Err(non_finite("gradient in the descent step"));
    }
    let v: Vec<f64> = eval
        .grad_edge
        .iter()
        .zip(&ascent.active)
        .map(|(&g, &a)| if a { g } else { 0.0 })
        .collect();
    let mut hvp_fallback = false;
    let mut implicit = None;
    if steps.alpha > 0.0 {
        let base = ascent.eval.theta_block();
        let grad_at = |p: &[f64]| -> Result<Vec<f64>, DiffError> {
            match obj.evaluate(p, &wmask.values, params.weights()) {
                Ok(e) => Ok(e.theta_block()),
                Err(err) => Err(DiffError::NonFinite(err.to_string())),
            }
        };
        match hvp_cross(grad_at, &ascent.before, &v, Some(&base)) {
            Ok(h) => implicit = Some(h),
            Err(DiffError::NonFinite(_)) => hvp_fallback = true,
            Err(e) => return Err(e.into()),
        }
    }

    let scale = steps.alpha * steps.eta1;
    let mut offset = 0;
    let mut wmask_delta = vec![0.0; wmask.total()];
    for (layer, (m, g)) in wmask.values.iter_mut().zip(&eval.grad_wmask).enumerate() {
        let frozen = &wmask.frozen[layer];
        for (k, x) in m.as_mut_slice().iter_mut().enumerate() {
            if frozen[k] {
                continue;
            }
            let extra = implicit.as_ref().map_or(0.0, |h| scale * h[offset + k]);
            let d = -steps.eta2 * (g.as_slice()[k] + extra);
            wmask_delta[offset + k] = d;
            *x = (*x + d).clamp(0.0, 1.0);
        }
        offset += m.len();
    }
    for (layer, (w, g)) in params
        .weights_mut()
        .iter_mut()
        .zip(&eval.grad_weights)
        .enumerate()
    {
        let frozen = &wmask.frozen[layer];
        for (k, x) in w.as_mut_slice().iter_mut().enumerate() {
            if frozen[k] {
                continue;
            }
            let extra = implicit.as_ref().map_or(0.0, |h| scale * h[offset + k]);
            *x -= steps.eta2 * (g.as_slice()[k] + extra);
        }
        offset += w.len();
    }
    Ok(DescentStep {
        loss: eval.loss,
        hvp_fallback,
        wmask_delta,
    })
}

/// Outcome of one joint descent step.
#[derive(Debug, Clone)]
pub struct UgsStep {
    /// Loss before the update.
    pub loss: f64,
    pub edge_delta: Vec<f64>,
    pub wmask_delta: Vec<f64>,
}

/// Joint projected descent on `m_g`, `m_θ` and `Θ`.
pub fn ugs_descent_step(
    obj: &dyn Objective,
    edge: &mut EdgeMask,
    wmask: &mut WeightMask,
    params: &mut GcnParams,
    eta1: f64,
    eta2: f64,
) -> Result<UgsStep, PruneError> {
    let eval = obj.evaluate(&edge.values, &wmask.values, params.weights())?;
    if !eval.is_finite() {
        return Err(non_finite("gradient in the descent step"));
    }
    let mut edge_delta = vec![0.0; edge.len()];
    for (k, v) in edge.values.iter_mut().enumerate() {
        if !edge.frozen[k] {
            edge_delta[k] = -eta1 * eval.grad_edge[k];
            *v += edge_delta[k];
        }
    }
    project_unit_interval(edge);
    let mut wmask_delta = vec![0.0; wmask.total()];
    let mut offset = 0;
    for (layer, (m, g)) in wmask.values.iter_mut().zip(&eval.grad_wmask).enumerate() {
        for (k, x) in m.as_mut_slice().iter_mut().enumerate() {
            if !wmask.frozen[layer][k] {
                let d = -eta2 * g.as_slice()[k];
                wmask_delta[offset + k] = d;
                *x = (*x + d).clamp(0.0, 1.0);
            }
        }
        offset += m.len();
    }
    for (layer, (w, g)) in params
        .weights_mut()
        .iter_mut()
        .zip(&eval.grad_weights)
        .enumerate()
    {
        for (k, x) in w.as_mut_slice().iter_mut().enumerate() {
            if !wmask.frozen[layer][k] {
                *x -= eta2 * g.as_slice()[k];
            }
        }
    }
    Ok(UgsStep {
        loss: eval.loss,
        edge_delta,
        wmask_delta,
    })
}

fn non_finite(what: &str) -> PruneError {
    PruneError::NonFinite {
        what: what.into(),
        round: 0,
        iteration: 0,
    }
}
