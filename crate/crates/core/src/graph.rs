//! Problem graphs: generators, dead-end pruning, edge orientation and the
//! breadth-first shortest-path oracle.
//!
//! A [`Graph`] is an undirected simple graph whose edges each stand for one
//! memristor. Every edge carries an orientation (`u` is the positive
//! terminal) so that polarity-sensitive devices know which way they face.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

/// Identifier of an edge (one memristor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    /// Positive terminal.
    pub u: NodeId,
    /// Negative terminal.
    pub v: NodeId,
}

impl Edge {
    pub fn new(id: u32, u: u32, v: u32) -> Self {
        Edge {
            id: EdgeId(id),
            u: NodeId(u),
            v: NodeId(v),
        }
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.u {
            self.v
        } else {
            self.u
        }
    }

    fn key(&self) -> (NodeId, NodeId) {
        if self.u < self.v {
            (self.u, self.v)
        } else {
            (self.v, self.u)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
    pub start: NodeId,
    pub end: NodeId,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("generation failed after {attempts} attempts")]
    GenerationFailed { attempts: u32 },
    #[error("start and end lie in different components")]
    DisconnectedTerminals,
    #[error("malformed graph: {0}")]
    Malformed(String),
}

/// Shortest path between the terminals as found by breadth-first search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathOracle {
    pub path: Vec<NodeId>,
    /// Number of edges on the path.
    pub length: usize,
    pub unique: bool,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Dense index of a node (position in the sorted `nodes` list).
    pub fn index_of(&self, n: NodeId) -> Option<usize> {
        self.nodes.binary_search(&n).ok()
    }

    /// Sorts nodes and edges into canonical order.
    pub fn canonicalize(&mut self) {
        self.nodes.sort_unstable();
        self.edges.sort_unstable_by_key(|e| e.id);
    }

    /// Checks the structural invariants every graph must satisfy.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Malformed(m));
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(*n) {
                return bad(format!("duplicate node id {n}"));
            }
        }
        if self.start == self.end {
            return bad("start equals end".to_string());
        }
        if !seen.contains(&self.start) {
            return bad(format!("start node {} not in node list", self.start));
        }
        if !seen.contains(&self.end) {
            return bad(format!("end node {} not in node list", self.end));
        }
        let mut ids = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if e.u == e.v {
                return bad(format!("edge {} is a self-loop", e.id));
            }
            if !seen.contains(&e.u) || !seen.contains(&e.v) {
                return bad(format!("edge {} references an unknown node", e.id));
            }
            if !ids.insert(e.id) {
                return bad(format!("duplicate edge id {}", e.id));
            }
            if !pairs.insert(e.key()) {
                return bad(format!("edge {} duplicates an existing edge", e.id));
            }
        }
        Ok(())
    }

    /// Renumbers edges `0..m` in their current order.
    fn renumber_edges(&mut self) {
        for (i, e) in self.edges.iter_mut().enumerate() {
            e.id = EdgeId(i as u32);
        }
    }
}

/// Incidence lists over dense node indices.
#[derive(Debug, Clone)]
pub struct Adjacency {
    /// `(edge index, neighbour index)` pairs per node, sorted by edge id.
    incident: Vec<Vec<(usize, usize)>>,
    ends: Vec<(usize, usize)>,
    pub start: usize,
    pub end: usize,
}

impl Adjacency {
    /// Builds the incidence structure. The graph must be valid.
    pub fn new(g: &Graph) -> Self {
        let idx = |n: NodeId| g.index_of(n).expect("edge endpoint not in node list");
        let mut incident = vec![Vec::new(); g.nodes.len()];
        let mut ends = Vec::with_capacity(g.edges.len());
        let mut order: Vec<usize> = (0..g.edges.len()).collect();
        order.sort_unstable_by_key(|&i| g.edges[i].id);
        for e in &g.edges {
            ends.push((idx(e.u), idx(e.v)));
        }
        for ei in order {
            let (a, b) = ends[ei];
            incident[a].push((ei, b));
            incident[b].push((ei, a));
        }
        Adjacency {
            incident,
            ends,
            start: idx(g.start),
            end: idx(g.end),
        }
    }

    pub fn node_count(&self) -> usize {
        self.incident.len()
    }

    pub fn incident(&self, node: usize) -> &[(usize, usize)] {
        &self.incident[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incident[node].len()
    }

    /// Dense `(u, v)` indices of edge `e` (position in `Graph::edges`).
    pub fn ends(&self, e: usize) -> (usize, usize) {
        self.ends[e]
    }

    /// Hop distances from `src`; `usize::MAX` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(n) = queue.pop_front() {
            for &(_, m) in &self.incident[n] {
                if dist[m] == usize::MAX {
                    dist[m] = dist[n] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    }
}

/// Removes dead-end branches and everything not connected to the terminals.
///
/// Degree-1 nodes other than `start` and `end` are stripped repeatedly until
/// none remain; then only the component containing `start` is kept. Node
/// and edge identifiers are preserved.
pub fn prune(graph: &Graph) -> Result<Graph, GraphError> {
    graph.validate()?;
    let adj = Adjacency::new(graph);
    let n = adj.node_count();
    let mut alive_edge = vec![true; graph.edges.len()];
    let mut alive_node = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| adj.degree(i)).collect();
    let is_terminal = |i: usize| i == adj.start || i == adj.end;

    let mut stack: Vec<usize> = (0..n).filter(|&i| degree[i] == 1 && !is_terminal(i)).collect();
    while let Some(i) = stack.pop() {
        if !alive_node[i] || degree[i] != 1 {
            continue;
        }
        alive_node[i] = false;
        for &(e, m) in adj.incident(i) {
            if alive_edge[e] {
                alive_edge[e] = false;
                degree[i] -= 1;
                degree[m] -= 1;
                if degree[m] == 1 && !is_terminal(m) {
                    stack.push(m);
                }
            }
        }
    }

    let mut reach = vec![false; n];
    let mut queue = VecDeque::from([adj.start]);
    reach[adj.start] = true;
    while let Some(i) = queue.pop_front() {
        for &(e, m) in adj.incident(i) {
            if alive_edge[e] && !reach[m] {
                reach[m] = true;
                queue.push_back(m);
            }
        }
    }
    if !reach[adj.end] {
        return Err(GraphError::DisconnectedTerminals);
    }

    let nodes = graph
        .nodes
        .iter()
        .enumerate()
        .filter(|&(i, _)| reach[i] && alive_node[i])
        .map(|(_, n)| *n)
        .collect();
    let edges = graph
        .edges
        .iter()
        .enumerate()
        .filter(|&(i, e)| alive_edge[i] && reach[adj.ends(i).0] && reach[adj.ends(i).1] && e.u != e.v)
        .map(|(_, e)| *e)
        .collect();
    let mut out = Graph {
        nodes,
        edges,
        start: graph.start,
        end: graph.end,
        metadata: graph.metadata.clone(),
    };
    out.canonicalize();
    Ok(out)
}

/// Orients every edge so that its positive terminal is the endpoint reached
/// first by a breadth-first search from `start`; ties go to the lower id.
pub fn orient(graph: &Graph) -> Graph {
    let adj = Adjacency::new(graph);
    let dist = adj.bfs_distances(adj.start);
    let mut out = graph.clone();
    for (i, e) in out.edges.iter_mut().enumerate() {
        let (a, b) = adj.ends(i);
        let (ka, kb) = ((dist[a], e.u), (dist[b], e.v));
        if kb < ka {
            core::mem::swap(&mut e.u, &mut e.v);
        }
    }
    out
}

/// Breadth-first shortest path from `start` to `end`, with the number of
/// distinct shortest paths counted over the BFS layer DAG.
pub fn bfs_oracle(graph: &Graph) -> Result<PathOracle, GraphError> {
    let adj = Adjacency::new(graph);
    let n = adj.node_count();
    let mut dist = vec![usize::MAX; n];
    let mut count = vec![0u64; n];
    let mut queue = VecDeque::new();
    dist[adj.start] = 0;
    count[adj.start] = 1;
    queue.push_back(adj.start);
    while let Some(i) = queue.pop_front() {
        for &(_, m) in adj.incident(i) {
            if dist[m] == usize::MAX {
                dist[m] = dist[i] + 1;
                queue.push_back(m);
            }
            if dist[m] == dist[i] + 1 {
                count[m] = count[m].saturating_add(count[i]);
            }
        }
    }
    if dist[adj.end] == usize::MAX {
        return Err(GraphError::DisconnectedTerminals);
    }

    // Walk back through the lowest-id predecessor at each layer.
    let mut path = vec![adj.end];
    let mut cur = adj.end;
    while cur != adj.start {
        cur = adj
            .incident(cur)
            .iter()
            .map(|&(_, m)| m)
            .filter(|&m| dist[m] != usize::MAX && dist[m] + 1 == dist[cur])
            .min()
            .expect("BFS predecessor must exist");
        path.push(cur);
    }
    path.reverse();
    Ok(PathOracle {
        path: path.into_iter().map(|i| graph.nodes[i]).collect(),
        length: dist[adj.end],
        unique: count[adj.end] == 1,
    })
}

/// Flags the edges that lie on at least one simple `start`–`end` path.
///
/// These are exactly the edges sharing a biconnected component with a
/// virtual `start`–`end` edge; everything else hangs off an articulation
/// point and carries no current.
pub fn edges_on_simple_paths(graph: &Graph) -> Vec<bool> {
    let adj = Adjacency::new(graph);
    let n = adj.node_count();
    let m = graph.edges.len();
    let virt = m;
    let mut incident: Vec<Vec<(usize, usize)>> = (0..n).map(|i| adj.incident(i).to_vec()).collect();
    incident[adj.start].push((virt, adj.end));
    incident[adj.end].push((virt, adj.start));

    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    let mut edge_stack: Vec<usize> = Vec::new();
    let mut on_path = vec![false; m];
    // (node, edge used to enter it, next incidence position)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();

    let root = adj.start;
    disc[root] = timer;
    low[root] = timer;
    timer += 1;
    stack.push((root, usize::MAX, 0));
    while let Some(top) = stack.len().checked_sub(1) {
        let (node, via, pos) = stack[top];
        if pos < incident[node].len() {
            let (e, next) = incident[node][pos];
            stack[top].2 += 1;
            if e == via {
                continue;
            }
            if disc[next] == usize::MAX {
                edge_stack.push(e);
                disc[next] = timer;
                low[next] = timer;
                timer += 1;
                stack.push((next, e, 0));
            } else if disc[next] < disc[node] {
                edge_stack.push(e);
                low[node] = low[node].min(disc[next]);
            }
        } else {
            stack.pop();
            if let Some(&(parent, _, _)) = stack.last() {
                low[parent] = low[parent].min(low[node]);
                if low[node] >= disc[parent] {
                    // `parent` separates a component; pop it off.
                    let mut comp = Vec::new();
                    while let Some(e) = edge_stack.pop() {
                        comp.push(e);
                        if e == via {
                            break;
                        }
                    }
                    if comp.contains(&virt) {
                        for e in comp {
                            if e != virt {
                                on_path[e] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    on_path
}

/// Retry policy and filters shared by the generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOptions {
    pub max_attempts: u32,
    /// Reject instances whose shortest path is shorter than this.
    pub min_path_len: usize,
    /// Reject instances whose shortest path is longer than this.
    pub max_path_len: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            max_attempts: 1000,
            min_path_len: 1,
            max_path_len: usize::MAX,
        }
    }
}

/// Square grid with each edge removed independently with `removal_prob`.
pub fn generate_grid(rows: u32, cols: u32, removal_prob: f64, seed: u64) -> Result<Graph, GraphError> {
    generate_grid_with(rows, cols, removal_prob, seed, &GeneratorOptions::default())
}

pub fn generate_grid_with(
    rows: u32,
    cols: u32,
    removal_prob: f64,
    seed: u64,
    opts: &GeneratorOptions,
) -> Result<Graph, GraphError> {
    if rows == 0 || cols == 0 || (rows as u64) * (cols as u64) < 2 {
        return Err(GraphError::InvalidParameters(format!(
            "grid {rows}x{cols} has fewer than two nodes"
        )));
    }
    if !(0.0..1.0).contains(&removal_prob) {
        return Err(GraphError::InvalidParameters(format!(
            "removal probability {removal_prob} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut lattice = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                lattice.push((id, id + 1));
            }
            if r + 1 < rows {
                lattice.push((id, id + cols));
            }
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("topology".to_string(), "grid".to_string());
    metadata.insert("rows".to_string(), rows.to_string());
    metadata.insert("cols".to_string(), cols.to_string());
    metadata.insert("removal_prob".to_string(), format!("{removal_prob}"));
    metadata.insert("seed".to_string(), seed.to_string());

    for _ in 0..opts.max_attempts {
        let kept: Vec<(u32, u32)> = lattice
            .iter()
            .copied()
            .filter(|_| !rng.random_bool(removal_prob))
            .collect();
        if let Some(g) = finish_attempt(&mut rng, n, &kept, &metadata, opts) {
            return Ok(g);
        }
    }
    Err(GraphError::GenerationFailed {
        attempts: opts.max_attempts,
    })
}

/// Raw Watts–Strogatz edge list: a ring of `n` nodes each joined to its `k`
/// nearest neighbours, every lattice edge rewired with probability `beta`.
pub fn watts_strogatz_edges<R: Rng>(n: u32, k: u32, beta: f64, rng: &mut R) -> Vec<(u32, u32)> {
    let key = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity((n * k / 2) as usize);
    for j in 1..=k / 2 {
        for i in 0..n {
            edges.push((i, (i + j) % n));
        }
    }
    let mut present: BTreeSet<(u32, u32)> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    let mut degree = vec![k; n as usize];
    for slot in edges.iter_mut() {
        if !rng.random_bool(beta) {
            continue;
        }
        let (i, old) = *slot;
        if degree[i as usize] >= n - 1 {
            continue;
        }
        let w = loop {
            let w = rng.random_range(0..n);
            if w != i && !present.contains(&key(i, w)) {
                break w;
            }
        };
        present.remove(&key(i, old));
        present.insert(key(i, w));
        degree[old as usize] -= 1;
        degree[w as usize] += 1;
        *slot = (i, w);
    }
    edges
}

/// Watts–Strogatz small-world network followed by the usual preprocessing.
pub fn generate_small_world(n: u32, k: u32, beta: f64, seed: u64) -> Result<Graph, GraphError> {
    generate_small_world_with(n, k, beta, seed, &GeneratorOptions::default())
}

pub fn generate_small_world_with(
    n: u32,
    k: u32,
    beta: f64,
    seed: u64,
    opts: &GeneratorOptions,
) -> Result<Graph, GraphError> {
    if n < 4 || k < 2 || !k.is_multiple_of(2) || k >= n {
        return Err(GraphError::InvalidParameters(format!(
            "small world needs n >= 4 and even k with 2 <= k < n (got n={n}, k={k})"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(GraphError::InvalidParameters(format!(
            "rewiring probability {beta} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metadata = BTreeMap::new();
    metadata.insert("topology".to_string(), "small_world".to_string());
    metadata.insert("n".to_string(), n.to_string());
    metadata.insert("k".to_string(), k.to_string());
    metadata.insert("beta".to_string(), format!("{beta}"));
    metadata.insert("seed".to_string(), seed.to_string());

    for _ in 0..opts.max_attempts {
        let edges = watts_strogatz_edges(n, k, beta, &mut rng);
        if let Some(g) = finish_attempt(&mut rng, n, &edges, &metadata, opts) {
            return Ok(g);
        }
    }
    Err(GraphError::GenerationFailed {
        attempts: opts.max_attempts,
    })
}

/// Draws terminals, prunes, and keeps the instance only if its shortest
/// path is unique and within the requested length bounds.
fn finish_attempt<R: Rng>(
    rng: &mut R,
    n: u32,
    edges: &[(u32, u32)],
    metadata: &BTreeMap<String, String>,
    opts: &GeneratorOptions,
) -> Option<Graph> {
    let start = rng.random_range(0..n);
    let mut end = rng.random_range(0..n - 1);
    if end >= start {
        end += 1;
    }
    let raw = Graph {
        nodes: (0..n).map(NodeId).collect(),
        edges: edges
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| Edge::new(i as u32, a, b))
            .collect(),
        start: NodeId(start),
        end: NodeId(end),
        metadata: metadata.clone(),
    };
    let pruned = prune(&raw).ok()?;
    let oracle = bfs_oracle(&pruned).ok()?;
    if !oracle.unique || oracle.length < opts.min_path_len || oracle.length > opts.max_path_len {
        return None;
    }
    let mut g = orient(&pruned);
    g.renumber_edges();
    Some(g)
}
