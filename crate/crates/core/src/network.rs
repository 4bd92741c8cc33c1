//! Communication graphs and doubly stochastic mixing weights.
//!
//! Agents exchange proposals over an undirected connected graph that may be
//! redrawn every step. Mixing uses Metropolis-Hastings weights
//! `w_ij = 1 / (1 + max(d_i, d_j))` on edges, with the remainder on the
//! diagonal, which makes every weight matrix symmetric, doubly stochastic,
//! and strictly positive on the diagonal.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::PayoffMatrix;
use crate::rng::{derive_seed, seeded};

/// Attempts before giving up on sampling a connected random graph.
pub const MAX_GRAPH_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("graph needs at least one node")]
    ZeroNodes,
    #[error("edge ({0}, {1}) is out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error(
        "no connected graph on {n} nodes with edge probability {edge_prob} \
         after {attempts} attempts; raise edge_prob"
    )]
    SamplingFailed {
        n: usize,
        edge_prob: f64,
        attempts: usize,
    },
    #[error("edge probability {0} is outside [0, 1]")]
    BadEdgeProbability(f64),
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("row {0} does not sum to 1")]
    NotStochastic(usize),
    #[error("negative weight at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize },
    #[error("diagonal entry {0} is not strictly positive")]
    NonPositiveDiagonal(usize),
    #[error("weights are {w}x{w} but payoff matrix has {rows} rows")]
    DimensionMismatch { w: usize, rows: usize },
    #[error("schedule has no graph for step {k}")]
    StepOutOfRange { k: usize },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Undirected connected graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Build and validate: edges in range, no self-loops, connected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::ZeroNodes);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(NetworkError::SelfLoop(a));
            }
            if a >= n || b >= n {
                return Err(NetworkError::EdgeOutOfRange(a, b, n));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut degrees = vec![0usize; n];
        for &(a, b) in &set {
            degrees[a] += 1;
            degrees[b] += 1;
        }
        let g = Graph {
            n,
            edges: set,
            degrees,
        };
        if !g.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self, NetworkError> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let next = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    stack.push(next);
                }
            }
        }
        count == self.n
    }
}

/// Erdos-Renyi draw repeated until connected, up to [`MAX_GRAPH_ATTEMPTS`].
/// Deterministic for a given seed.
pub fn random_connected_graph(
    n: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<Graph, NetworkError> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(NetworkError::BadEdgeProbability(edge_prob));
    }
    if n == 0 {
        return Err(NetworkError::ZeroNodes);
    }
    if n == 1 {
        return Graph::new(1, &[]);
    }
    let mut rng = seeded(seed);
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < edge_prob {
                    edges.push((i, j));
                }
            }
        }
        match Graph::new(n, &edges) {
            Ok(g) => return Ok(g),
            Err(NetworkError::Disconnected) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(NetworkError::SamplingFailed {
        n,
        edge_prob,
        attempts: MAX_GRAPH_ATTEMPTS,
    })
}

/// Symmetric doubly stochastic mixing matrix with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Array2<f64>,
}

impl WeightMatrix {
    const TOL: f64 = 1e-12;

    /// Validate an explicit matrix.
    pub fn new(w: Array2<f64>) -> Result<Self, NetworkError> {
        let (rows, cols) = w.dim();
        if rows != cols {
            return Err(NetworkError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                if w[(i, j)] < -Self::TOL {
                    return Err(NetworkError::NegativeWeight { i, j });
                }
                if (w[(i, j)] - w[(j, i)]).abs() > Self::TOL {
                    return Err(NetworkError::NotSymmetric { i, j });
                }
            }
            let sum: f64 = w.row(i).sum();
            if (sum - 1.0).abs() > Self::TOL {
                return Err(NetworkError::NotStochastic(i));
            }
            if w[(i, i)] <= 0.0 {
                return Err(NetworkError::NonPositiveDiagonal(i));
            }
        }
        Ok(WeightMatrix { w })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    /// Smallest nonzero weight; every nonzero entry is at least this.
    pub fn gamma_min(&self) -> f64 {
        self.w
            .iter()
            .copied()
            .filter(|&x| x > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Metropolis-Hastings weights for a connected graph.
pub fn metropolis_weights(graph: &Graph) -> WeightMatrix {
    let n = graph.n_nodes();
    let mut w = Array2::zeros((n, n));
    for (a, b) in graph.edges() {
        let weight = 1.0 / (1.0 + graph.degree(a).max(graph.degree(b)) as f64);
        w[(a, b)] = weight;
        w[(b, a)] = weight;
    }
    for i in 0..n {
        let off: f64 = w.row(i).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(w).expect("metropolis weights are valid by construction")
}

/// One consensus round: row `i` of the result is the `w_i`-weighted average
/// of the input rows. The payoff matrix may have any number of columns.
pub fn consensus_apply(w: &WeightMatrix, x: &PayoffMatrix) -> Result<PayoffMatrix, NetworkError> {
    if w.n() != x.nrows() {
        return Err(NetworkError::DimensionMismatch {
            w: w.n(),
            rows: x.nrows(),
        });
    }
    Ok(w.matrix().dot(x))
}

/// Which graph the agents use at each step.
#[derive(Debug, Clone)]
pub enum NetworkSchedule {
    /// Same graph forever.
    Static(Graph),
    /// Fresh connected Erdos-Renyi graph per step, seeded from
    /// `(master_seed, k)` so any step can be regenerated independently.
    RandomPerStep {
        n: usize,
        edge_prob: f64,
        master_seed: u64,
    },
    /// Explicit per-step list, e.g. replayed from an exported schedule.
    Explicit(Vec<Graph>),
}

impl NetworkSchedule {
    pub fn graph_at(&self, k: usize) -> Result<Graph, NetworkError> {
        match self {
            NetworkSchedule::Static(g) => Ok(g.clone()),
            NetworkSchedule::RandomPerStep {
                n,
                edge_prob,
                master_seed,
            } => random_connected_graph(*n, *edge_prob, derive_seed(*master_seed, k as u64)),
            NetworkSchedule::Explicit(graphs) => graphs
                .get(k)
                .cloned()
                .ok_or(NetworkError::StepOutOfRange { k }),
        }
    }

    pub fn weights_at(&self, k: usize) -> Result<WeightMatrix, NetworkError> {
        Ok(metropolis_weights(&self.graph_at(k)?))
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            NetworkSchedule::Static(g) => g.n_nodes(),
            NetworkSchedule::RandomPerStep { n, .. } => *n,
            NetworkSchedule::Explicit(graphs) => graphs.first().map_or(0, Graph::n_nodes),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleStep {
    k: usize,
    edges: Vec<[usize; 2]>,
}

/// Export the first `horizon` graphs as JSON (`[{"k": 0, "edges": [[i, j], ..]}, ..]`).
pub fn schedule_to_json(
    schedule: &NetworkSchedule,
    horizon: usize,
) -> Result<String, NetworkError> {
    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let g = schedule.graph_at(k)?;
        steps.push(ScheduleStep {
            k,
            edges: g.edges().map(|(a, b)| [a, b]).collect(),
        });
    }
    Ok(serde_json::to_string_pretty(&steps)?)
}

/// Rebuild an explicit schedule from exported JSON. The node count is taken
/// from `n`, or inferred as the largest endpoint plus one when absent.
pub fn schedule_from_json(
    text: &str,
    n: Option<usize>,
) -> Result<NetworkSchedule, NetworkError> {
    let mut steps: Vec<ScheduleStep> = serde_json::from_str(text)?;
    steps.sort_by_key(|s| s.k);
    if steps.is_empty() {
        return Err(NetworkError::BadSchedule("no steps".into()));
    }
    let n = n.unwrap_or_else(|| {
        steps
            .iter()
            .flat_map(|s| s.edges.iter().flatten().copied())
            .max()
            .map_or(1, |m| m + 1)
    });
    let mut graphs = Vec::with_capacity(steps.len());
    for (expect, step) in steps.iter().enumerate() {
        if step.k != expect {
            return Err(NetworkError::BadSchedule(format!(
                "steps must cover 0..len exactly, found k={}",
                step.k
            )));
        }
        let edges: Vec<_> = step.edges.iter().map(|e| (e[0], e[1])).collect();
        graphs.push(Graph::new(n, &edges)?);
    }
    Ok(NetworkSchedule::Explicit(graphs))
}
