use std::collections::VecDeque;

use super::{Graph, GraphError};

/// Hop distance from every node to the nearest node of `sources`
/// (`usize::MAX` when unreachable).
pub fn distance_to_set(graph: &Graph, sources: &[usize]) -> Vec<usize> {
    let adj = graph.neighbors();
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s] != 0 {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Per-edge flag: does a message along this edge reach a labeled node
/// within `num_layers` propagation steps? An edge qualifies when one of its
/// endpoints is within `num_layers - 1` hops of the train set.
pub fn related_edges(graph: &Graph, num_layers: usize) -> Result<Vec<bool>, GraphError> {
    if num_layers == 0 {
        return Err(GraphError::Invalid("num_layers must be at least 1".into()));
    }
    if graph.split().train.is_empty() {
        return Err(GraphError::EmptyTrainSet);
    }
    let dist = distance_to_set(graph, &graph.split().train);
    let reach = num_layers - 1;
    Ok(graph
        .edges()
        .iter()
        .map(|&(i, j)| dist[i].min(dist[j]) <= reach)
        .collect())
}

/// Number and fraction of edges inside the labeled nodes' receptive field.
/// The fraction is 0 for an edgeless graph.
pub fn edges_related_to_loss(graph: &Graph, num_layers: usize) -> Result<(usize, f64), GraphError> {
    let flags = related_edges(graph, num_layers)?;
    let count = flags.iter().filter(|&&f| f).count();
    let frac = if flags.is_empty() {
        0.0
    } else {
        count as f64 / flags.len() as f64
    };
    Ok((count, frac))
}
