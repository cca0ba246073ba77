use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gnn::{fit, FitConfig, FitResult, GcnParams, LossSpec, WeightMask};
use crate::graphio::Graph;

use super::steps::StepSizes;
use super::{
    inner_ascent_step, magnitude_prune_ranked, outer_descent_step, random_prune, ugs_descent_step,
    EdgeMask, GraphObjective, Method, Objective, PruneConfig, PruneError, RoundRecord,
    TicketState,
};

const MASK_STREAM: u64 = 1;
const RANDOM_PRUNE_STREAM: u64 = 2;
const RENOISE_STREAM: u64 = 3;

/// Survivors set to `1 - U[0, noise]` before a round of mask training, so
/// scores that only move by less than the float spacing near 1 stay ranked.
fn renoise(edge: &mut EdgeMask, wmask: &mut WeightMask, noise: f64, rng: &mut ChaCha8Rng) {
    if noise <= 0.0 {
        return;
    }
    for (v, &f) in edge.values.iter_mut().zip(&edge.frozen) {
        if !f {
            *v = 1.0 - rng.random_range(0.0..=noise);
        }
    }
    for (m, fr) in wmask.values.iter_mut().zip(&wmask.frozen) {
        for (v, &f) in m.as_mut_slice().iter_mut().zip(fr) {
            if !f {
                *v = 1.0 - rng.random_range(0.0..=noise);
            }
        }
    }
}

/// Losses of one round of mask training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    /// Loss at every iteration (evaluated at the advanced edge mask for our
    /// method, before the update for the baselines).
    pub losses: Vec<f64>,
    pub hvp_fallbacks: usize,
    /// Summed unprojected edge-mask updates; ranks scores tied at a bound.
    pub edge_pressure: Vec<f64>,
    /// Same for the weight mask, flattened across layers.
    pub weight_pressure: Vec<f64>,
}

fn accumulate(acc: &mut Vec<f64>, delta: &[f64]) {
    if acc.is_empty() {
        acc.resize(delta.len(), 0.0);
    }
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

/// Sub-network retrained from the initialization on the supervised loss.
#[derive(Debug, Clone)]
pub struct FinalResult {
    pub params: GcnParams,
    pub fit: FitResult,
}

/// A failed run with everything recorded up to the failure.
#[derive(Debug)]
pub struct PruneFailure {
    pub error: PruneError,
    pub partial: Box<TicketState>,
}

impl std::fmt::Display for PruneFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} rounds)", self.error, self.partial.round)
    }
}

impl std::error::Error for PruneFailure {}

/// Fresh masks: all ones minus `mask_init_noise` noise, seeded by `cfg.seed`.
pub fn initial_masks(graph: &Graph, params: &GcnParams, cfg: &PruneConfig) -> (EdgeMask, WeightMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(MASK_STREAM);
    let edge = EdgeMask::with_noise(graph.num_edges(), cfg.mask_init_noise, &mut rng);
    let wmask = WeightMask::with_noise(params, cfg.mask_init_noise, &mut rng);
    (edge, wmask)
}

/// Resets the weights to the initialization; masks are untouched.
pub fn rewind(params: &mut GcnParams) {
    params.rewind();
}

fn at_iteration(e: PruneError, iteration: usize) -> PruneError {
    match e {
        PruneError::NonFinite { what, round, .. } => PruneError::NonFinite {
            what,
            round,
            iteration,
        },
        other => other,
    }
}

/// `T` alternating ascent and descent steps.
pub fn run_round(
    obj: &dyn Objective,
    edge: &mut EdgeMask,
    wmask: &mut WeightMask,
    params: &mut GcnParams,
    cfg: &PruneConfig,
) -> Result<RoundLog, PruneError> {
    let steps = StepSizes {
        eta1: cfg.eta1,
        eta2: cfg.eta2,
        alpha: cfg.alpha,
    };
    let mut log = RoundLog::default();
    for t in 0..cfg.t_inner {
        let ascent = inner_ascent_step(obj, edge, wmask, params, cfg.eta1).map_err(|e| at_iteration(e, t))?;
        let descent = outer_descent_step(obj, edge, &ascent, wmask, params, steps)
            .map_err(|e| at_iteration(e, t))?;
        log.losses.push(descent.loss);
        log.hvp_fallbacks += usize::from(descent.hvp_fallback);
        accumulate(&mut log.edge_pressure, &ascent.delta);
        accumulate(&mut log.weight_pressure, &descent.wmask_delta);
    }
    Ok(log)
}

/// `T` joint descent steps on edge mask, weight mask and weights.
pub fn baseline_ugs_round(
    obj: &dyn Objective,
    edge: &mut EdgeMask,
    wmask: &mut WeightMask,
    params: &mut GcnParams,
    cfg: &PruneConfig,
) -> Result<RoundLog, PruneError> {
    let mut log = RoundLog::default();
    for t in 0..cfg.t_inner {
        let step = ugs_descent_step(obj, edge, wmask, params, cfg.eta1, cfg.eta2)
            .map_err(|e| at_iteration(e, t))?;
        log.losses.push(step.loss);
        accumulate(&mut log.edge_pressure, &step.edge_delta);
        accumulate(&mut log.weight_pressure, &step.wmask_delta);
    }
    Ok(log)
}

fn flatten(wmask: &WeightMask) -> (Vec<f64>, Vec<bool>) {
    (
        wmask.values.iter().flat_map(|m| m.as_slice().iter().copied()).collect(),
        wmask.frozen.iter().flatten().copied().collect(),
    )
}

fn scatter(wmask: &mut WeightMask, values: &[f64], frozen: &[bool]) {
    let mut off = 0;
    for (m, f) in wmask.values.iter_mut().zip(wmask.frozen.iter_mut()) {
        let n = m.len();
        m.as_mut_slice().copy_from_slice(&values[off..off + n]);
        f.copy_from_slice(&frozen[off..off + n]);
        off += n;
    }
}

/// Magnitude pruning of both masks; weights are ranked globally across
/// layers. Scores tied at a projection bound are ordered by the round's
/// unprojected pressure.
fn prune_by_magnitude(
    edge: &mut EdgeMask,
    wmask: &mut WeightMask,
    cfg: &PruneConfig,
    log: &RoundLog,
) -> Result<(usize, usize), PruneError> {
    let pressure = |p: &[f64]| if p.is_empty() { None } else { Some(p.to_vec()) };
    let ep = pressure(&log.edge_pressure);
    let pe = magnitude_prune_ranked(&mut edge.values, ep.as_deref(), &mut edge.frozen, cfg.p_g)?;
    let (mut v, mut f) = flatten(wmask);
    let wp = pressure(&log.weight_pressure);
    let pw = magnitude_prune_ranked(&mut v, wp.as_deref(), &mut f, cfg.p_theta)?;
    scatter(wmask, &v, &f);
    Ok((pe, pw))
}

/// Freezes uniformly random unfrozen entries at the given percentages.
pub fn baseline_random_prune(
    edge: &mut EdgeMask,
    wmask: &mut WeightMask,
    p_g: f64,
    p_theta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize), PruneError> {
    let pe = random_prune(&mut edge.values, &mut edge.frozen, p_g, rng)?;
    let (mut v, mut f) = flatten(wmask);
    let pw = random_prune(&mut v, &mut f, p_theta, rng)?;
    scatter(wmask, &v, &f);
    Ok((pe, pw))
}

/// Trains the ticket's binarized sub-network from its initialization on
/// the supervised loss for `epochs` and reports best-validation accuracy.
pub fn probe(graph: &Graph, ticket: &TicketState, epochs: usize) -> Result<FinalResult, PruneError> {
    let mut params = GcnParams::new(ticket.theta0().to_vec())?;
    let wmask = ticket.weight_mask.binarized();
    let cfg = FitConfig {
        epochs,
        lr: ticket.config.eta2,
        normalization: ticket.config.normalization,
    };
    let fit = fit(graph, &ticket.edge_mask.binarized(), &mut params, &wmask, &cfg)?;
    Ok(FinalResult { params, fit })
}

/// Final retraining of the ticket for `retrain_epochs`.
pub fn retrain_final(graph: &Graph, ticket: &TicketState) -> Result<FinalResult, PruneError> {
    probe(graph, ticket, ticket.config.retrain_epochs)
}

fn loss_spec(cfg: &PruneConfig, lambda: f64) -> LossSpec {
    LossSpec {
        lambda,
        sinkhorn: cfg.sinkhorn.clone(),
        normalization: cfg.normalization,
    }
}

fn record(
    graph: &Graph,
    ticket: &TicketState,
    pruned: (usize, usize),
    log: &RoundLog,
) -> Result<RoundRecord, PruneError> {
    let p = probe(graph, ticket, ticket.config.probe_epochs)?;
    Ok(RoundRecord {
        round: ticket.round,
        graph_sparsity: ticket.graph_sparsity(),
        weight_sparsity: ticket.weight_sparsity(),
        val_acc: p.fit.best_val_acc,
        test_acc: p.fit.test_acc,
        pruned_edges: pruned.0,
        pruned_weights: pruned.1,
        final_loss: log.losses.last().copied(),
        hvp_fallbacks: log.hvp_fallbacks,
    })
}

fn keep_going(ticket: &TicketState) -> bool {
    let cfg = &ticket.config;
    ticket.graph_sparsity() < cfg.s_g
        && ticket.weight_sparsity() < cfg.s_theta
        && cfg.max_rounds.is_none_or(|m| ticket.round < m)
}

/// Iterative pruning from fresh masks followed by final retraining.
///
/// Rounds continue while graph sparsity is below `s_g` AND weight sparsity
/// is below `s_theta`, so the loop stops as soon as either target is met.
pub fn run_iterative(
    graph: &Graph,
    params: GcnParams,
    cfg: &PruneConfig,
    method: Method,
) -> Result<(TicketState, FinalResult), PruneFailure> {
    let (edge, wmask) = initial_masks(graph, &params, cfg);
    let ticket = TicketState::new(method, cfg.clone(), edge, wmask, params.theta0().to_vec());
    run_iterative_from(graph, params, ticket)
}

/// Continues an existing ticket with its own method and config.
pub fn run_iterative_from(
    graph: &Graph,
    params: GcnParams,
    ticket: TicketState,
) -> Result<(TicketState, FinalResult), PruneFailure> {
    run_iterative_observed(graph, params, ticket, &mut |_| {})
}

/// [`run_iterative_from`] calling `on_record` each time a round record
/// (including the round-0 record) is appended to the history.
pub fn run_iterative_observed(
    graph: &Graph,
    mut params: GcnParams,
    mut ticket: TicketState,
    on_record: &mut dyn FnMut(&TicketState),
) -> Result<(TicketState, FinalResult), PruneFailure> {
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(PruneFailure {
                        error: error.into(),
                        partial: Box::new(ticket),
                    })
                }
            }
        };
    }
    attempt!(ticket.config.validate());
    if params.theta0() != ticket.theta0() {
        attempt!(Err(PruneError::Config(
            "parameters were not initialized from the ticket's snapshot".into()
        )));
    }
    let cfg = ticket.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(RANDOM_PRUNE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(RENOISE_STREAM);

    if ticket.history.is_empty() {
        let rec = attempt!(record(graph, &ticket, (0, 0), &RoundLog::default()));
        ticket.history.push(rec);
        on_record(&ticket);
    }
    while keep_going(&ticket) {
        let round = ticket.round + 1;
        rewind(&mut params);
        if round > 1 && ticket.method != Method::Random {
            renoise(&mut ticket.edge_mask, &mut ticket.weight_mask, cfg.mask_init_noise, &mut noise_rng);
        }
        let lambda = match ticket.method {
            Method::Ours | Method::UgsWd => cfg.lambda,
            Method::Ugs | Method::Random => 0.0,
        };
        let obj = GraphObjective {
            graph,
            spec: loss_spec(&cfg, lambda),
        };
        let trained = {
            let t = &mut ticket;
            match t.method {
                Method::Ours => run_round(&obj, &mut t.edge_mask, &mut t.weight_mask, &mut params, &cfg),
                Method::Ugs | Method::UgsWd => {
                    baseline_ugs_round(&obj, &mut t.edge_mask, &mut t.weight_mask, &mut params, &cfg)
                }
                Method::Random => Ok(RoundLog::default()),
            }
        };
        let log = attempt!(trained.map_err(|e| match e {
            PruneError::NonFinite { what, iteration, .. } => PruneError::NonFinite {
                what,
                round,
                iteration,
            },
            other => other,
        }));
        let pruned = attempt!(match ticket.method {
            Method::Random => baseline_random_prune(
                &mut ticket.edge_mask,
                &mut ticket.weight_mask,
                cfg.p_g,
                cfg.p_theta,
                &mut rng,
            ),
            _ => prune_by_magnitude(&mut ticket.edge_mask, &mut ticket.weight_mask, &cfg, &log),
        });
        ticket.round = round;
        ticket.stamp(round);
        let rec = attempt!(record(graph, &ticket, pruned, &log));
        ticket.history.push(rec);
        on_record(&ticket);
    }
    rewind(&mut params);
    let result = attempt!(retrain_final(graph, &ticket));
    Ok((ticket, result))
}

