use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;

/// Weighted directed graph with a source, a destination and per-node shortest-path labels.
///
/// `adjacency[i][j] > 0` is the weight of edge `i -> j`; `0` means no edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInstance {
    pub node_count: usize,
    pub adjacency: Vec<Vec<f64>>,
    pub source: usize,
    pub destination: usize,
    pub labels: Vec<u8>,
}

impl GraphInstance {
    /// Shortest route through the labeled nodes only, provided it visits every labeled node.
    pub fn labeled_path(&self) -> Option<Vec<usize>> {
        let induced: Vec<Vec<f64>> = (0..self.node_count)
            .map(|i| {
                (0..self.node_count)
                    .map(|j| {
                        if self.labels[i] == 1 && self.labels[j] == 1 {
                            self.adjacency[i][j]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let (_, path) = dijkstra(&induced, self.source, self.destination)?;
        let total = self.labels.iter().filter(|l| **l == 1).count();
        (path.len() == total).then_some(path)
    }

    pub fn path_weight(&self, path: &[usize]) -> Option<f64> {
        path.windows(2).try_fold(0.0, |acc, w| {
            let wt = self.adjacency[w[0]][w[1]];
            (wt > 0.0).then_some(acc + wt)
        })
    }
}

/// Shortest path by Dijkstra on a dense adjacency matrix.
///
/// Ties between equally distant frontier nodes settle the lowest index first, and a node's
/// predecessor only changes on strict improvement, so the returned path is deterministic.
/// Returns `None` when `destination` is unreachable.
pub fn dijkstra(adjacency: &[Vec<f64>], source: usize, destination: usize) -> Option<(f64, Vec<usize>)> {
    let n = adjacency.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    loop {
        let mut u = usize::MAX;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && (u == usize::MAX || dist[i] < dist[u]) {
                u = i;
            }
        }
        if u == usize::MAX {
            break;
        }
        done[u] = true;
        if u == destination {
            break;
        }
        for v in 0..n {
            let w = adjacency[u][v];
            if w > 0.0 && !done[v] && dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                prev[v] = u;
            }
        }
    }
    if !dist[destination].is_finite() {
        return None;
    }
    let mut path = vec![destination];
    let mut cur = destination;
    while cur != source {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Some((dist[destination], path))
}

pub const MAX_GRAPH_REJECTIONS: usize = 1000;

/// Random graph with `n ∈ n_range` nodes, each ordered pair an edge with probability
/// `edge_prob` and weight uniform in `[0.1, 1.0]`. Resamples until the destination is reachable.
pub fn gen_graph<R: Rng + ?Sized>(
    rng: &mut R,
    n_range: (usize, usize),
    edge_prob: f64,
) -> Result<GraphInstance, TaskError> {
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(TaskError::Config(format!("edge probability {edge_prob} outside (0, 1]")));
    }
    let (lo, hi) = n_range;
    if lo < 2 || hi < lo {
        return Err(TaskError::Config(format!("invalid node range [{lo}, {hi}]")));
    }
    for _ in 0..MAX_GRAPH_REJECTIONS {
        let n = rng.random_range(lo..=hi);
        let mut adjacency = vec![vec![0.0; n]; n];
        for (i, row) in adjacency.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                if i != j && rng.random::<f64>() < edge_prob {
                    *w = rng.random_range(0.1..=1.0);
                }
            }
        }
        let source = rng.random_range(0..n);
        let mut destination = rng.random_range(0..n - 1);
        if destination >= source {
            destination += 1;
        }
        if let Some((_, path)) = dijkstra(&adjacency, source, destination) {
            let mut labels = vec![0u8; n];
            for v in path {
                labels[v] = 1;
            }
            return Ok(GraphInstance {
                node_count: n,
                adjacency,
                source,
                destination,
                labels,
            });
        }
    }
    Err(TaskError::Generation(format!(
        "no connected source/destination pair after {MAX_GRAPH_REJECTIONS} graphs"
    )))
}
