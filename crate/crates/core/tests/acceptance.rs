//! Acceptance suite. Runs every check, prints one PASS/FAIL line per check
//! and exits non-zero if any failed. Pass check numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 3 9`.
//!
//! `GLT_CORA_DIR` may point at a dataset directory holding Cora; the
//! receptive-field check then also verifies its related-edge count.

use std::collections::VecDeque;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glt::diffcore::DenseMatrix;
use glt::gnn::{adjacency, evaluate, gcn_forward, GcnParams, LossSpec, WeightMask};
use glt::graphio::{generate_sbm, load_planetoid_dir, related_edges, Graph, Normalization, SbmConfig, Split};
use glt::harness::{
    macs_at, prepare_source, run_transfer, run_wd_trace, ticket_macs, ExperimentConfig, Head, TransferConfig,
    TransferInit,
};
use glt::otax::{sinkhorn_plan, SinkhornConfig};
use glt::pruner::{
    initial_masks, magnitude_prune, rewind, run_iterative, run_iterative_observed, run_round, EdgeMask,
    GraphObjective, Method, PruneConfig, TicketState,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// shared oracles

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// BFS hop distance to the nearest source.
fn hops(n: usize, edges: &[(usize, usize)], sources: &[usize]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut dist = vec![usize::MAX; n];
    let mut q = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Edges whose message reaches a labeled node in two propagation steps:
/// an endpoint is a labeled node or a neighbour of one.
fn two_hop_related(n: usize, edges: &[(usize, usize)], train: &[usize]) -> Vec<bool> {
    let d = hops(n, edges, train);
    edges.iter().map(|&(i, j)| d[i] <= 1 || d[j] <= 1).collect()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, f: usize, c: usize, avg_deg: f64, train: Vec<usize>) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < avg_deg / n as f64 {
                edges.push((i, j));
            }
        }
    }
    let x = DenseMatrix::from_vec(n, f, (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = (0..n).map(|i| i % c).collect();
    let test = (0..n).filter(|i| !train.contains(i)).collect();
    Graph::new(edges, x, labels, c, Split { train, val: vec![], test }).unwrap()
}

// ---------------------------------------------------------------------------
// 1. gradients

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let g = generate_sbm(&SbmConfig {
        blocks: vec![7, 7, 6],
        p_in: 0.4,
        p_out: 0.05,
        feature_dim: 10,
        train_per_class: 2,
        val_per_class: 1,
        seed: 1,
        ..SbmConfig::default()
    })
    .unwrap();
    assert_eq!(g.num_nodes(), 20);
    let mode = Normalization::FixedDegree;
    // a fixed iteration count makes the solver output a smooth function
    let spec = LossSpec {
        lambda: 0.1,
        sinkhorn: SinkhornConfig {
            max_iters: 30,
            tol: 1e-300,
            ..SinkhornConfig::default()
        },
        normalization: mode,
    };
    // first seeded draw whose predictions span two classes, so the
    // Wasserstein term contributes
    let (mut rng, params, wm, edge, eval) = (101..)
        .find_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = GcnParams::glorot(&[g.num_features(), 8, g.num_classes()], &mut rng).unwrap();
            let mut wm = WeightMask::ones(&params);
            for m in &mut wm.values {
                for v in m.as_mut_slice() {
                    *v = rng.random_range(0.3..1.0);
                }
            }
            let edge: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.3..1.0)).collect();
            let eval = evaluate(&g, &edge, &wm.values, params.weights(), &spec).unwrap();
            (eval.l1 < 0.0).then_some((rng, params, wm, edge, eval))
        })
        .unwrap();

    // flat layout: W0, W1, m0, m1, m_g
    let mut flat: Vec<f64> = Vec::new();
    let mut analytic: Vec<f64> = Vec::new();
    for (w, gw) in params.weights().iter().zip(&eval.grad_weights) {
        flat.extend_from_slice(w.as_slice());
        analytic.extend_from_slice(gw.as_slice());
    }
    for (m, gm) in wm.values.iter().zip(&eval.grad_wmask) {
        flat.extend_from_slice(m.as_slice());
        analytic.extend_from_slice(gm.as_slice());
    }
    flat.extend_from_slice(&edge);
    analytic.extend_from_slice(&eval.grad_edge);
    let shapes: Vec<(usize, usize)> = params.weights().iter().map(|w| w.shape()).collect();
    let unflatten = |x: &[f64]| {
        let mut off = 0;
        let mut take = |(r, c): (usize, usize)| {
            let m = DenseMatrix::from_vec(r, c, x[off..off + r * c].to_vec()).unwrap();
            off += r * c;
            m
        };
        let ws: Vec<DenseMatrix> = shapes.iter().map(|&s| take(s)).collect();
        let ms: Vec<DenseMatrix> = shapes.iter().map(|&s| take(s)).collect();
        (ws, ms, x[off..].to_vec())
    };
    let loss = |x: &[f64]| {
        let (ws, ms, em) = unflatten(x);
        evaluate(&g, &em, &ms, &ws, &spec).unwrap().loss
    };
    // signature of the piecewise structure: ReLU pattern and predicted classes
    let pattern = |x: &[f64]| {
        let (ws, ms, em) = unflatten(x);
        let adj = adjacency(&g, &em, mode).unwrap();
        let pre = adj
            .spmm(&g.features().matmul(&ms[0].hadamard(&ws[0]).unwrap()).unwrap())
            .unwrap();
        let relu: Vec<bool> = pre.as_slice().iter().map(|&v| v > 0.0).collect();
        let frozen = ms.iter().map(|m| vec![false; m.len()]).collect();
        let wmask = WeightMask { values: ms, frozen };
        let p = GcnParams::new(ws).unwrap();
        let z = gcn_forward(&g, &adj, &p, &wmask).unwrap();
        (relu, z.row_argmax())
    };

    let h = 1e-6;
    let base = pattern(&flat);
    let mut coords: Vec<usize> = (0..flat.len()).collect();
    coords.shuffle(&mut rng);
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut worst_at = 0;
    for &k in &coords {
        let mut plus = flat.clone();
        plus[k] += h;
        let mut minus = flat.clone();
        minus[k] -= h;
        if pattern(&plus) != base || pattern(&minus) != base {
            skipped += 1;
            continue;
        }
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-3);
        let err = (analytic[k] - numeric).abs() / denom;
        if err > worst {
            worst = err;
            worst_at = k;
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        checked >= 200 && worst <= 1e-5 && secs < 60.0,
        format!(
            "{checked} coordinates checked ({skipped} on a kink skipped) of {}, max rel err {worst:.2e} at {worst_at}, {secs:.1}s",
            flat.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Sinkhorn against exact OT

fn exact_ot(d: &[Vec<f64>]) -> f64 {
    fn rec(d: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == d.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..d.len() {
            if !used[j] {
                used[j] = true;
                rec(d, row + 1, used, acc + d[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(d, 0, &mut vec![false; d.len()], 0.0, &mut best);
    best / d.len() as f64
}

fn sinkhorn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SinkhornConfig {
        epsilon: 0.01,
        // near-permutation plans converge slowly at this epsilon
        max_iters: 1_000_000,
        tol: 1e-7,
        ..SinkhornConfig::default()
    };
    let (mut worst_gap, mut worst_marg) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let n = 1 + case % 4;
        let dim = 1 + case % 3;
        let pts = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (a, b) = (pts(&mut rng), pts(&mut rng));
        let d: Vec<Vec<f64>> = a
            .iter()
            .map(|p| {
                b.iter()
                    .map(|q| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        let dm = DenseMatrix::from_rows(&d).unwrap();
        let plan = sinkhorn_plan(&dm, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        let exact = exact_ot(&d);
        let mut cost = 0.0;
        let target = 1.0 / n as f64;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                cost += plan.plan.get(i, j) * d[i][j];
                row += plan.plan.get(i, j);
                col += plan.plan.get(j, i);
            }
            worst_marg = worst_marg.max((row - target).abs()).max((col - target).abs());
        }
        if (cost - plan.cost).abs() > 1e-12 {
            return Err(format!("case {case}: reported cost {} but <D,P> = {cost}", plan.cost));
        }
        worst_gap = worst_gap.max((cost - exact).abs());
    }
    check(
        worst_gap <= 0.05 && worst_marg <= 1e-6,
        format!("50 cases, max |cost - exact| {worst_gap:.4}, max marginal violation {worst_marg:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. sparsity schedule

fn sparsity_schedule() -> Outcome {
    // Cora-shaped masks: 5429 edges, weights 1433x16 + 16x7
    let (ne, nw) = (5429usize, 1433 * 16 + 16 * 7);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut ev, mut ef) = (vec![1.0; ne], vec![false; ne]);
    let (mut wv, mut wf) = (vec![1.0; nw], vec![false; nw]);
    for round in 1..=17 {
        // stand-in for a round of training: fresh distinct scores
        for (v, f) in ev.iter_mut().zip(&ef).chain(wv.iter_mut().zip(&wf)) {
            if !f {
                *v = rng.random::<f64>();
            }
        }
        for vals in [&ev, &wv] {
            let mut live: Vec<f64> = vals.iter().copied().filter(|v| *v != 0.0).collect();
            live.sort_by(f64::total_cmp);
            if live.windows(2).any(|w| w[0] == w[1]) {
                return Err(format!("round {round}: scores not distinct"));
            }
        }
        magnitude_prune(&mut ev, &mut ef, 5.0).map_err(|e| e.to_string())?;
        magnitude_prune(&mut wv, &mut wf, 20.0).map_err(|e| e.to_string())?;
        let survivors_one = ev.iter().zip(&ef).chain(wv.iter().zip(&wf)).all(|(&v, &f)| if f { v == 0.0 } else { v == 1.0 });
        if !survivors_one {
            return Err(format!("round {round}: survivors not reset to 1"));
        }
    }
    let gs = ef.iter().filter(|&&f| f).count() as f64 / ne as f64;
    let ws = wf.iter().filter(|&&f| f).count() as f64 / nw as f64;
    let (gs_ref, ws_ref) = (1.0 - 0.95f64.powi(17), 1.0 - 0.8f64.powi(17));
    let (gs_exp, ws_exp) = (0.5802, 0.9780);
    check(
        [(gs, gs_ref), (ws, ws_ref), (gs, gs_exp), (ws, ws_exp)]
            .iter()
            .all(|(a, b)| (a - b).abs() <= 0.005),
        format!(
            "GS {:.2}% (closed form {:.2}%, expected {:.2}%), WS {:.2}% (closed form {:.2}%, expected {:.2}%)",
            100.0 * gs,
            100.0 * gs_ref,
            100.0 * gs_exp,
            100.0 * ws,
            100.0 * ws_ref,
            100.0 * ws_exp
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. receptive field

fn cora_count(dir: &Path) -> Result<(usize, usize), String> {
    let (g, _) = load_planetoid_dir(dir).map_err(|e| e.to_string())?;
    let dist = hops(g.num_nodes(), g.edges(), &g.split().train);
    // count over the raw edge list so repeated citations are kept
    let text = std::fs::read_to_string(dir.join("edges.txt")).map_err(|e| e.to_string())?;
    let (mut total, mut related) = (0, 0);
    for l in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut it = l.split_whitespace().map(|t| t.parse::<usize>().unwrap());
        let (i, j) = (it.next().unwrap(), it.next().unwrap());
        total += 1;
        if dist[i] <= 1 || dist[j] <= 1 {
            related += 1;
        }
    }
    Ok((related, total))
}

fn receptive_field() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let spec0 = LossSpec {
        lambda: 0.0,
        ..LossSpec::default()
    };
    let mut graphs = 0;
    let mut with_unrelated = 0;
    for trial in 0..40 {
        let n = rng.random_range(6..=50);
        let ntrain = rng.random_range(1..=3.min(n));
        let train: Vec<usize> = rand::seq::index::sample(&mut rng, n, ntrain).into_vec();
        let deg = rng.random_range(1.5..4.0);
        let g = random_graph(&mut rng, n, 4, 3, deg, train);
        let oracle = two_hop_related(n, g.edges(), &g.split().train);
        if related_edges(&g, 2).unwrap() != oracle {
            return Err(format!("graph {trial}: library related set differs from BFS oracle"));
        }
        with_unrelated += usize::from(oracle.iter().any(|&r| !r));
        let params = GcnParams::glorot(&[4, 5, 3], &mut rng).unwrap();
        let wm = WeightMask::ones(&params);
        let mask: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(0.1..1.0)).collect();
        let eval = evaluate(&g, &mask, &wm.values, params.weights(), &spec0).unwrap();
        if let Some(k) = (0..g.num_edges()).find(|&k| eval.grad_edge[k] != 0.0 && !oracle[k]) {
            return Err(format!("graph {trial}: unrelated edge {k} has L0 gradient {}", eval.grad_edge[k]));
        }
        graphs += 1;
    }

    let g = generate_sbm(&SbmConfig {
        blocks: vec![12; 3],
        p_in: 0.3,
        p_out: 0.03,
        feature_dim: 8,
        train_per_class: 3,
        val_per_class: 3,
        seed: 8,
        ..SbmConfig::default()
    })
    .unwrap();
    let oracle = two_hop_related(g.num_nodes(), g.edges(), &g.split().train);
    let params = GcnParams::glorot(&[8, 6, 3], &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let wm = WeightMask::ones(&params);
    let mask = vec![1.0; g.num_edges()];
    let spec1 = LossSpec {
        lambda: 0.1,
        ..LossSpec::default()
    };
    let eval = evaluate(&g, &mask, &wm.values, params.weights(), &spec1).unwrap();
    let reached = (0..g.num_edges()).filter(|&k| !oracle[k] && eval.grad_edge[k] != 0.0).count();
    let unrelated = oracle.iter().filter(|&&r| !r).count();

    let cora = match std::env::var_os("GLT_CORA_DIR") {
        Some(dir) => Some(cora_count(Path::new(&dir))?),
        None => None,
    };
    let cora_ok = cora.is_none_or(|(r, t)| r == 2702 && t == 5429);
    let cora_note = match cora {
        Some((r, t)) => format!("Cora related {r} of {t}"),
        None => "Cora not supplied".into(),
    };
    check(
        reached > 0 && cora_ok,
        format!(
            "{graphs} graphs ({with_unrelated} with unrelated edges): L0 support inside the field; \
             with lambda 0.1 {reached} of {unrelated} unrelated SBM edges get gradient; {cora_note}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. ours against UGS

fn method_vs_baseline() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        methods: vec![Method::Ours, Method::Ugs],
        seeds: (0..5).collect(),
        max_rounds: Some(17),
        ..ExperimentConfig::default()
    };
    let report = glt::harness::execute_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if let Some(r) = report.runs.iter().find(|r| r.error.is_some()) {
        return Err(format!("{} seed {} failed: {}", r.method, r.seed, r.error.as_ref().unwrap()));
    }
    let acc = |m: Method, seed: u64, round: usize| {
        report
            .runs
            .iter()
            .find(|r| r.method == m && r.seed == seed)
            .and_then(|r| r.records.iter().find(|x| x.round == round))
            .map(|x| (x.test_acc, x.graph_sparsity))
    };
    let mut rounds_checked = 0;
    let mut worst_gap = f64::INFINITY;
    let mut worst_round = 0;
    for round in 0..=17 {
        let (mut ours, mut ugs, mut gs) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..5 {
            let (Some((a, g)), Some((b, _))) = (acc(Method::Ours, seed, round), acc(Method::Ugs, seed, round)) else {
                return Err(format!("round {round} missing for seed {seed}"));
            };
            ours.push(a);
            ugs.push(b);
            gs.push(g);
        }
        if mean(&gs) >= 0.40 {
            rounds_checked += 1;
            let gap = mean(&ours) - mean(&ugs);
            if gap < worst_gap {
                worst_gap = gap;
                worst_round = round;
            }
        }
    }
    let wins = (0..5)
        .filter(|&s| acc(Method::Ours, s, 17).unwrap().0 > acc(Method::Ugs, s, 17).unwrap().0)
        .count();
    let final_ours: Vec<f64> = (0..5).map(|s| acc(Method::Ours, s, 17).unwrap().0).collect();
    let final_ugs: Vec<f64> = (0..5).map(|s| acc(Method::Ugs, s, 17).unwrap().0).collect();
    check(
        rounds_checked > 0 && worst_gap >= -0.01 && wins >= 3 && secs < 1800.0,
        format!(
            "{rounds_checked} rounds with GS >= 40%, worst mean gap ours-ugs {:+.2} pt (round {worst_round}); \
             round 17 mean ours {:.2}% vs ugs {:.2}%, ours ahead in {wins}/5 seeds; {secs:.0}s",
            100.0 * worst_gap,
            100.0 * mean(&final_ours),
            100.0 * mean(&final_ugs)
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. L0 against the summed WD

fn loss_wd_correlation() -> Outcome {
    let cfg = ExperimentConfig::default();
    let g = cfg.load_graph(0).map_err(|e| e.to_string())?;
    let mut params = cfg.init_params(&g, 0).map_err(|e| e.to_string())?;
    let pc = cfg.prune_config(0);
    let fit = glt::gnn::FitConfig {
        epochs: 100,
        lr: cfg.eta2,
        normalization: cfg.normalization,
    };
    let rows = run_wd_trace(&g, &mut params, &fit, &pc.sinkhorn).map_err(|e| e.to_string())?;
    let rows = &rows[..100];
    let l0: Vec<f64> = rows.iter().map(|r| r.l0).collect();
    let wd: Vec<f64> = rows.iter().map(|r| r.wd).collect();
    let r = pearson(&l0, &wd);
    check(
        r < -0.5,
        format!(
            "pearson {r:.3} over 100 epochs (L0 {:.3} -> {:.3}, WD {:.3} -> {:.3})",
            l0[0], l0[99], wd[0], wd[99]
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. pruning loop mechanics

fn small_sbm(seed: u64) -> Graph {
    generate_sbm(&SbmConfig {
        blocks: vec![15; 3],
        p_in: 0.3,
        p_out: 0.03,
        feature_dim: 8,
        train_per_class: 3,
        val_per_class: 4,
        seed,
        ..SbmConfig::default()
    })
    .unwrap()
}

fn small_params(g: &Graph, seed: u64) -> GcnParams {
    GcnParams::glorot(&[g.num_features(), 6, g.num_classes()], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn quick() -> PruneConfig {
    PruneConfig {
        t_inner: 4,
        retrain_epochs: 10,
        probe_epochs: 5,
        ..PruneConfig::default()
    }
}

fn bits(ms: &[DenseMatrix]) -> Vec<u64> {
    ms.iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits())).collect()
}

fn loop_mechanics() -> Outcome {
    let mut notes = Vec::new();

    // rewind
    let g = small_sbm(3);
    let mut params = small_params(&g, 3);
    let snapshot = bits(params.theta0());
    let cfg = quick();
    let (mut edge, mut wmask) = initial_masks(&g, &params, &cfg);
    let obj = GraphObjective {
        graph: &g,
        spec: LossSpec::default(),
    };
    run_round(&obj, &mut edge, &mut wmask, &mut params, &cfg).map_err(|e| e.to_string())?;
    if bits(params.weights()) == snapshot {
        return Err("a round left the weights untouched".into());
    }
    rewind(&mut params);
    if bits(params.weights()) != snapshot {
        return Err("rewind is not bitwise exact".into());
    }
    notes.push("rewind exact");

    // frozen sets and survivors across an observed run
    let cfg = PruneConfig {
        max_rounds: Some(4),
        s_g: 0.99,
        s_theta: 0.99,
        ..quick()
    };
    let g = small_sbm(6);
    for method in Method::ALL {
        let params = small_params(&g, 6);
        let (e, w) = initial_masks(&g, &params, &cfg);
        let ticket = TicketState::new(method, cfg.clone(), e, w, params.theta0().to_vec());
        let mut states: Vec<(Vec<bool>, Vec<bool>, bool)> = Vec::new();
        let (t, _) = run_iterative_observed(&g, params, ticket, &mut |t: &TicketState| {
            let wf: Vec<bool> = t.weight_mask.frozen.iter().flatten().copied().collect();
            let wv = t.weight_mask.values.iter().flat_map(|m| m.as_slice().to_vec());
            let binary = t.round == 0
                || (t.edge_mask.values.iter().zip(&t.edge_mask.frozen).all(|(&v, &f)| v == if f { 0.0 } else { 1.0 })
                    && wv.zip(&wf).all(|(v, &f)| v == if f { 0.0 } else { 1.0 }));
            states.push((t.edge_mask.frozen.clone(), wf, binary));
        })
        .map_err(|f| format!("{method}: {}", f.error))?;
        if t.round != 4 || states.len() != 5 {
            return Err(format!("{method}: expected 4 rounds, got {}", t.round));
        }
        for (r, pair) in states.windows(2).enumerate() {
            let grows = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(&x, &y)| !x || y) && a != b;
            if !grows(&pair[0].0, &pair[1].0) || !grows(&pair[0].1, &pair[1].1) {
                return Err(format!("{method}: frozen sets not strictly growing at round {}", r + 1));
            }
        }
        if let Some(r) = states.iter().position(|s| !s.2) {
            return Err(format!("{method}: survivors not exactly 1 after round {r}"));
        }
    }
    notes.push("frozen sets monotone, survivors exactly 1 (4 methods x 4 rounds)");

    // either target ends the loop
    let g = small_sbm(5);
    for (s_g, s_theta, which) in [(0.9, 0.3, "weight"), (0.08, 0.99, "graph")] {
        let cfg = PruneConfig { s_g, s_theta, ..quick() };
        let (t, _) = run_iterative(&g, small_params(&g, 5), &cfg, Method::Ugs).map_err(|f| f.error.to_string())?;
        let (gs, ws) = (t.graph_sparsity(), t.weight_sparsity());
        let prev = &t.history[t.history.len() - 2];
        let hit = gs >= s_g || ws >= s_theta;
        let prev_below = prev.graph_sparsity < s_g && prev.weight_sparsity < s_theta;
        if !hit || !prev_below {
            return Err(format!("{which} target: stopped at round {} with GS {gs:.3} WS {ws:.3}", t.round));
        }
    }
    notes.push("loop stops at the first round reaching either target");

    // determinism without init noise
    let g = small_sbm(7);
    let cfg = PruneConfig {
        mask_init_noise: 0.0,
        max_rounds: Some(2),
        ..quick()
    };
    let run = || {
        let (t, fin) = run_iterative(&g, small_params(&g, 7), &cfg, Method::Ours).unwrap();
        (t.to_archive(), bits(fin.params.weights()), fin.fit.test_acc.to_bits())
    };
    if run() != run() {
        return Err("two runs with mask_init_noise 0 differ".into());
    }
    notes.push("bitwise-identical reruns");
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 8. transfer

fn transfer() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        max_rounds: Some(5),
        ..ExperimentConfig::default()
    };
    let (mut reinit_wins, mut post, mut dense) = (0, Vec::new(), Vec::new());
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let target_seed = 100 + seed;
        let g = cfg.load_graph(seed).map_err(|e| e.to_string())?;
        let params = cfg.init_params(&g, seed).map_err(|e| e.to_string())?;
        let source = prepare_source(&g, params, &cfg.prune_config(seed), Method::Ours).map_err(|e| e.to_string())?;
        let target = cfg.load_graph(target_seed).map_err(|e| e.to_string())?;
        let tc = TransferConfig {
            head: Head::ReplaceLast,
            epochs: cfg.retrain_epochs,
            lr: cfg.eta2,
            normalization: cfg.normalization,
            seed: target_seed,
            hidden_dim: Some(cfg.hidden_dim),
        };
        let rep = run_transfer(&source, &target, &tc).map_err(|e| e.to_string())?;
        let acc = |i| rep.final_acc(i).unwrap();
        let (re, rnd) = (acc(TransferInit::ReInitialized), acc(TransferInit::RandomInitGlt));
        reinit_wins += usize::from(re >= rnd);
        post.push(acc(TransferInit::PostTrained));
        dense.push(acc(TransferInit::DensePostTrained));
        pairs.push(format!("{:.1}/{:.1}", 100.0 * re, 100.0 * rnd));
    }
    let gap = mean(&post) - mean(&dense);
    check(
        reinit_wins >= 3 && gap.abs() <= 0.01,
        format!(
            "re-init >= random-init in {reinit_wins}/5 ({}); post-trained GLT {:.2}% vs dense {:.2}% ({:+.2} pt); {:.0}s",
            pairs.join(" "),
            100.0 * mean(&post),
            100.0 * mean(&dense),
            100.0 * gap,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. MAC counter

/// Dense forward that counts each multiply whose operands are structurally
/// present: a surviving weight in `H W`, a nonzero `Â` entry in `Â (H W)`.
fn instrumented_multiplies(g: &Graph, edge: &[f64], weights: &[DenseMatrix], masks: &[DenseMatrix]) -> u64 {
    let n = g.num_nodes();
    let mut a = vec![vec![false; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = true;
    }
    for (&(i, j), &m) in g.edges().iter().zip(edge) {
        if m != 0.0 {
            a[i][j] = true;
            a[j][i] = true;
        }
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| g.features().row(i).to_vec()).collect();
    let mut count = 0u64;
    for (w, m) in weights.iter().zip(masks) {
        let (fin, fout) = w.shape();
        let mut hw = vec![vec![0.0; fout]; n];
        for i in 0..n {
            for f in 0..fin {
                for o in 0..fout {
                    if m.get(f, o) != 0.0 {
                        hw[i][o] += h[i][f] * w.get(f, o);
                        count += 1;
                    }
                }
            }
        }
        let mut out = vec![vec![0.0; fout]; n];
        for i in 0..n {
            for j in 0..n {
                if a[i][j] {
                    for o in 0..fout {
                        out[i][o] += hw[j][o];
                        count += 1;
                    }
                }
            }
        }
        h = out;
    }
    count
}

fn random_ticket(rng: &mut ChaCha8Rng) -> (Graph, TicketState) {
    let n = rng.random_range(4..30);
    let f = rng.random_range(2..8);
    let c = rng.random_range(2..5);
    let g = random_graph(rng, n, f, c, 3.0, (0..c).collect());
    let params = GcnParams::glorot(&[f, rng.random_range(2..8), c], rng).unwrap();
    let ef: Vec<bool> = (0..g.num_edges()).map(|_| rng.random::<f64>() < 0.4).collect();
    let edge = EdgeMask {
        values: ef.iter().map(|&x| if x { 0.0 } else { 1.0 }).collect(),
        frozen: ef,
    };
    let mut wm = WeightMask::ones(&params);
    for (m, fr) in wm.values.iter_mut().zip(wm.frozen.iter_mut()) {
        for (v, x) in m.as_mut_slice().iter_mut().zip(fr.iter_mut()) {
            if rng.random::<f64>() < 0.3 {
                *v = 0.0;
                *x = true;
            }
        }
    }
    let t = TicketState::new(Method::Ugs, PruneConfig::default(), edge, wm, params.theta0().to_vec());
    (g, t)
}

fn mac_counter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut totals = Vec::new();
    for fixture in 0..10 {
        let (g, t) = random_ticket(&mut rng);
        let oracle = instrumented_multiplies(&g, &t.edge_mask.values, t.theta0(), &t.weight_mask.values);
        let got = ticket_macs(&g, &t);
        if got != oracle {
            return Err(format!("fixture {fixture}: counter {got} vs oracle {oracle}"));
        }
        totals.push(oracle);

        // one more edge, then one more weight, each strictly lowers the count
        let mut t2 = t.clone();
        if let Some(k) = t2.edge_mask.frozen.iter().position(|&f| !f) {
            t2.edge_mask.frozen[k] = true;
            t2.edge_mask.values[k] = 0.0;
            let m2 = ticket_macs(&g, &t2);
            if m2 >= got || m2 != instrumented_multiplies(&g, &t2.edge_mask.values, t2.theta0(), &t2.weight_mask.values) {
                return Err(format!("fixture {fixture}: pruning an edge gave {m2} from {got}"));
            }
        }
        let mut t3 = t.clone();
        if let Some(k) = t3.weight_mask.frozen[0].iter().position(|&f| !f) {
            t3.weight_mask.frozen[0][k] = true;
            t3.weight_mask.values[0].as_mut_slice()[k] = 0.0;
            let m3 = ticket_macs(&g, &t3);
            if m3 >= got {
                return Err(format!("fixture {fixture}: pruning a weight gave {m3} from {got}"));
            }
        }
    }

    // along a real run the per-round count strictly falls
    let g = small_sbm(12);
    let cfg = PruneConfig {
        max_rounds: Some(5),
        s_g: 0.99,
        s_theta: 0.99,
        ..quick()
    };
    let (t, _) = run_iterative(&g, small_params(&g, 12), &cfg, Method::Ugs).map_err(|f| f.error.to_string())?;
    let per_round: Vec<u64> = (0..=t.round).map(|r| macs_at(&g, &t, r)).collect();
    let decreasing = per_round.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing,
        format!(
            "10 fixtures match the oracle exactly ({} to {} MACs); per-round MACs {:?}",
            totals.iter().min().unwrap(),
            totals.iter().max().unwrap(),
            per_round
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradients vs finite differences", gradient_suite),
        (2, "sinkhorn vs exact OT", sinkhorn_oracle),
        (3, "sparsity schedule", sparsity_schedule),
        (4, "L0 gradient support", receptive_field),
        (5, "ours vs UGS", method_vs_baseline),
        (6, "L0 vs WD correlation", loss_wd_correlation),
        (7, "pruning loop mechanics", loop_mechanics),
        (8, "transfer", transfer),
        (9, "MAC counter", mac_counter),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // libtest-style listing so `cargo test -- --list` works
    if std::env::args().any(|a| a == "--list") {
        for (id, name, _) in &checks {
            println!("{id} {name}: test");
        }
        return;
    }
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] {id}. {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {id}. {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} check(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all checks passed");
}
