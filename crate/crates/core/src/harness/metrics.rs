use crate::gnn::WeightMask;
use crate::graphio::Graph;
use crate::pruner::TicketState;

/// `(graph sparsity, weight sparsity)` of a ticket: one minus the surviving
/// fraction of edges and of weight entries.
pub fn sparsity_metrics(ticket: &TicketState) -> (f64, f64) {
    (ticket.graph_sparsity(), ticket.weight_sparsity())
}

/// Inference multiply-accumulates of a masked GCN.
///
/// Per layer `l` with `nnz_l` surviving weights and `out_l` output columns:
/// `N * nnz_l` for the dense product `H W_l` (zero-masked weights skipped)
/// plus `nnz(Â) * out_l` for the sparse aggregation, where
/// `nnz(Â) = 2 * surviving_edges + N` (both directions plus self-loops).
pub fn mac_count(num_nodes: usize, surviving_edges: usize, layers: &[(usize, usize)]) -> u64 {
    let n = num_nodes as u64;
    let nnz_adj = 2 * surviving_edges as u64 + n;
    layers
        .iter()
        .map(|&(nnz, out)| n * nnz as u64 + nnz_adj * out as u64)
        .sum()
}

fn layer_shape(wmask: &WeightMask, nnz: impl Fn(usize) -> usize) -> Vec<(usize, usize)> {
    wmask
        .values
        .iter()
        .enumerate()
        .map(|(l, m)| (nnz(l), m.cols()))
        .collect()
}

/// MACs of a ticket's current masks on `graph`.
pub fn ticket_macs(graph: &Graph, ticket: &TicketState) -> u64 {
    let wm = &ticket.weight_mask;
    let layers = layer_shape(wm, |l| wm.frozen[l].iter().filter(|&&f| !f).count());
    mac_count(graph.num_nodes(), ticket.edge_mask.surviving(), &layers)
}

/// MACs of the ticket as it stood right after `round`, recovered from the
/// per-entry pruning stamps.
pub fn macs_at(graph: &Graph, ticket: &TicketState, round: usize) -> u64 {
    let alive = |s: u32| s == 0 || s as usize > round;
    let edges = ticket.edge_pruned_round().iter().filter(|&&s| alive(s)).count();
    let stamps = ticket.weight_pruned_round();
    let layers = layer_shape(&ticket.weight_mask, |l| {
        stamps[l].iter().filter(|&&s| alive(s)).count()
    });
    mac_count(graph.num_nodes(), edges, &layers)
}
