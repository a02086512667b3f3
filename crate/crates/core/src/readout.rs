//! Reading the answer out of a halted circuit.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Adjacency, Graph, NodeId, PathOracle};
use crate::models::Devices;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ReadoutError {
    #[error("readout stuck at node {at}: every neighbour already visited")]
    Stuck { at: NodeId, partial: Vec<NodeId> },
    #[error("readout visited more nodes than the graph has")]
    Overlong { partial: Vec<NodeId> },
}

impl ReadoutError {
    pub fn partial(&self) -> &[NodeId] {
        match self {
            ReadoutError::Stuck { partial, .. } | ReadoutError::Overlong { partial } => partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// Smallest conductance margin between an on-path device and an
    /// off-path device at the same path node (S).
    pub delta_g: f64,
    pub delta_g_max: f64,
    pub normalized: f64,
    pub success: bool,
    /// Greedy readout; partial if the walk failed.
    pub read_path: Vec<NodeId>,
    pub read_error: Option<ReadoutError>,
}

/// Follows the highest-conductance device out of each node, never stepping
/// back onto a visited node, from `start` until `end` is reached. Ties go to
/// the lowest edge id.
pub fn read_path(graph: &Graph, x: &[f64], devices: &Devices) -> Result<Vec<NodeId>, ReadoutError> {
    let adj = Adjacency::new(graph);
    let n = adj.node_count();
    let mut visited = vec![false; n];
    let mut cur = adj.start;
    visited[cur] = true;
    let mut path = vec![graph.nodes[cur]];
    while cur != adj.end {
        if path.len() > n {
            return Err(ReadoutError::Overlong { partial: path });
        }
        let mut best: Option<(f64, usize)> = None;
        // Incidence lists are ordered by edge id, so strict `>` keeps the
        // lowest id among equals.
        for &(e, m) in adj.incident(cur) {
            if visited[m] {
                continue;
            }
            let g = devices.conductance(e, x[e]);
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, m));
            }
        }
        let Some((_, next)) = best else {
            return Err(ReadoutError::Stuck {
                at: graph.nodes[cur],
                partial: path,
            });
        };
        visited[next] = true;
        path.push(graph.nodes[next]);
        cur = next;
    }
    Ok(path)
}

/// Conductance margin of the oracle path against every off-path device
/// sharing one of its nodes. Paths with no such devices score the maximum.
pub fn compute_delta_g(graph: &Graph, x: &[f64], devices: &Devices, oracle: &PathOracle) -> PathMetrics {
    let adj = Adjacency::new(graph);
    let idx: Vec<usize> = oracle
        .path
        .iter()
        .map(|&n| graph.index_of(n).expect("oracle node in graph"))
        .collect();
    let mut path_edges = BTreeSet::new();
    let mut forward = Vec::with_capacity(idx.len().saturating_sub(1));
    for w in idx.windows(2) {
        let e = adj
            .incident(w[0])
            .iter()
            .find(|&&(_, m)| m == w[1])
            .map(|&(e, _)| e)
            .expect("oracle path follows graph edges");
        path_edges.insert(e);
        forward.push(e);
    }

    let delta_g_max = devices.nominal().delta_g_max();
    let mut delta_g = f64::INFINITY;
    for (k, &node) in idx.iter().take(forward.len()).enumerate() {
        let g_path = devices.conductance(forward[k], x[forward[k]]);
        for &(e, _) in adj.incident(node) {
            if !path_edges.contains(&e) {
                delta_g = delta_g.min(g_path - devices.conductance(e, x[e]));
            }
        }
    }
    if delta_g == f64::INFINITY {
        delta_g = delta_g_max;
    }
    let (read, read_error) = match read_path(graph, x, devices) {
        Ok(p) => (p, None),
        Err(e) => (e.partial().to_vec(), Some(e)),
    };
    PathMetrics {
        delta_g,
        delta_g_max,
        normalized: delta_g / delta_g_max,
        success: delta_g > 0.0,
        read_path: read,
        read_error,
    }
}

/// Whether the greedy readout reproduced the oracle path exactly.
pub fn verify_against_oracle(metrics: &PathMetrics, oracle: &PathOracle) -> bool {
    metrics.read_error.is_none() && metrics.read_path == oracle.path
}
