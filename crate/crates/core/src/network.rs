//! Agent communication graphs and their doubly stochastic mixing weights.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{VarId, VariableLayout};
use crate::error::{Error, Result};

pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 10_000;
/// Tolerance on row/column sums of a validated weight matrix.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Named graph families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Topology {
    Line,
    Ring,
    Star,
    Complete,
    ErdosRenyi { p: f64 },
    /// A line plus chords added by increasing hop distance until `edges` edges exist.
    EdgeCount { edges: usize },
}

impl Topology {
    pub fn label(&self) -> String {
        match self {
            Topology::Line => "line".into(),
            Topology::Ring => "ring".into(),
            Topology::Star => "star".into(),
            Topology::Complete => "complete".into(),
            Topology::ErdosRenyi { p } => format!("er{p}"),
            Topology::EdgeCount { edges } => format!("edges{edges}"),
        }
    }

    /// Undirected edge list `(i, j)` with `i < j`.
    pub fn edges(&self, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
        if n == 0 {
            return Err(Error::Connectivity("network needs at least one agent".into()));
        }
        let edges = match self {
            Topology::Line => (1..n).map(|i| (i - 1, i)).collect(),
            Topology::Ring => {
                let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                if n > 2 {
                    e.push((0, n - 1));
                }
                e
            }
            Topology::Star => (1..n).map(|i| (0, i)).collect(),
            Topology::Complete => (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
            Topology::ErdosRenyi { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::config("topology.p", "edge probability must lie in [0, 1]"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..1000 {
                    let e: Vec<(usize, usize)> = (0..n)
                        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                        .filter(|_| rng.random::<f64>() < *p)
                        .collect();
                    if is_connected(n, &e, &(0..n).collect::<Vec<_>>()) {
                        return Ok(e);
                    }
                }
                return Err(Error::Connectivity(format!(
                    "no connected Erdős–Rényi graph with n={n}, p={p} in 1000 draws"
                )));
            }
            Topology::EdgeCount { edges } => {
                let max = n * (n - 1) / 2;
                if *edges + 1 < n || *edges > max {
                    return Err(Error::config(
                        "topology.edges",
                        format!("edge count must lie in [{}, {max}] for {n} agents", n.saturating_sub(1)),
                    ));
                }
                let mut all: Vec<(usize, usize)> =
                    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
                all.sort_by_key(|&(i, j)| (j - i, i));
                all.truncate(*edges);
                all
            }
        };
        Ok(edges)
    }
}

/// How raw weights are seeded before validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Adjacency plus identity, balanced by Sinkhorn.
    #[default]
    LazySinkhorn,
    /// `A_ij = 1 / (1 + max(deg_i, deg_j))`.
    Metropolis,
}

/// Outcome of a Sinkhorn balancing run.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornReport {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Maximum deviation of any row or column sum from one.
pub fn stochastic_residual(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Alternating row/column normalization, symmetrized after every sweep.
pub fn sinkhorn_normalize(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SinkhornReport> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::layout("sinkhorn needs a nonempty square matrix"));
    }
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::numerical("sinkhorn input must be finite and nonnegative"));
    }
    if (0..n).any(|i| m[(i, i)] <= 0.0) {
        return Err(Error::numerical("sinkhorn input needs a strictly positive diagonal"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::numerical("sinkhorn input must be symmetric"));
            }
        }
    }
    let mut a = m.clone();
    let mut residual = stochastic_residual(&a);
    let mut iterations = 0;
    while residual >= tol {
        if iterations == max_iter {
            return Err(Error::Sinkhorn { iterations, residual });
        }
        for mut row in a.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        for mut col in a.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        a = (&a + a.transpose()) * 0.5;
        iterations += 1;
        residual = stochastic_residual(&a);
    }
    Ok(SinkhornReport { matrix: a, iterations, residual })
}

fn is_connected(n: usize, edges: &[(usize, usize)], nodes: &[usize]) -> bool {
    if nodes.is_empty() {
        return false;
    }
    let set: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        if set.contains(&i) && set.contains(&j) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut seen = BTreeSet::from([nodes[0]]);
    let mut queue = VecDeque::from([nodes[0]]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen.len() == set.len()
}

/// Communication graph with symmetric doubly stochastic weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    weights: DMatrix<f64>,
}

impl Network {
    pub fn from_topology(n: usize, topology: &Topology, rule: WeightRule, seed: u64) -> Result<Self> {
        Network::from_edges(n, &topology.edges(n, seed)?, rule)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)], rule: WeightRule) -> Result<Self> {
        let edges = normalize_edges(n, edges)?;
        let mut raw = DMatrix::<f64>::identity(n, n);
        match rule {
            WeightRule::LazySinkhorn => {
                for &(i, j) in &edges {
                    raw[(i, j)] = 1.0;
                    raw[(j, i)] = 1.0;
                }
                raw = sinkhorn_normalize(&raw, SINKHORN_TOL, SINKHORN_MAX_ITER)?.matrix;
            }
            WeightRule::Metropolis => {
                let mut deg = vec![0usize; n];
                for &(i, j) in &edges {
                    deg[i] += 1;
                    deg[j] += 1;
                }
                raw.fill(0.0);
                for &(i, j) in &edges {
                    let w = 1.0 / (1 + deg[i].max(deg[j])) as f64;
                    raw[(i, j)] = w;
                    raw[(j, i)] = w;
                }
                for i in 0..n {
                    raw[(i, i)] = 1.0 - raw.row(i).sum();
                }
            }
        }
        Network::from_weights(raw)
    }

    /// Validates a weight matrix; edges are read off its support.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(Error::layout("weight matrix must be nonempty and square"));
        }
        let mut edges = BTreeSet::new();
        for i in 0..n {
            if !(weights[(i, i)] > 0.0) {
                return Err(Error::numerical(format!("self weight of agent {i} is not positive")));
            }
            for j in (i + 1)..n {
                let (a, b) = (weights[(i, j)], weights[(j, i)]);
                if (a - b).abs() > STOCHASTIC_TOL || a < 0.0 || !a.is_finite() {
                    return Err(Error::numerical(format!("weights ({i},{j}) not symmetric and nonnegative")));
                }
                if a > 0.0 {
                    edges.insert((i, j));
                }
            }
        }
        let residual = stochastic_residual(&weights);
        if residual > STOCHASTIC_TOL {
            return Err(Error::numerical(format!("weights not doubly stochastic (residual {residual:e})")));
        }
        let all: Vec<usize> = (0..n).collect();
        if !is_connected(n, &edges.iter().copied().collect::<Vec<_>>(), &all) {
            return Err(Error::Connectivity("network is not connected".into()));
        }
        Ok(Network { n, edges, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Undirected edges `(i, j)`, `i < j`, without self-loops.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `V_i`: agent `i` and its neighbors, ascending.
    pub fn closed_neighborhood(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j == i || self.weights[(i, j)] > 0.0).collect()
    }

    /// Neighbors excluding `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.weights[(i, j)] > 0.0).collect()
    }

    pub fn is_connected_on(&self, agents: &[usize]) -> bool {
        is_connected(self.n, &self.edges(), agents)
    }

    /// `A(x)` on the agents `V(x)` (ascending): off-diagonal weights kept,
    /// the weight of every excluded neighbor moved onto the diagonal.
    pub fn restricted_matrix(&self, agents: &[usize]) -> Result<DMatrix<f64>> {
        let mut agents = agents.to_vec();
        agents.sort();
        agents.dedup();
        if agents.iter().any(|&a| a >= self.n) {
            return Err(Error::layout("restriction references an unknown agent"));
        }
        let k = agents.len();
        let mut m = DMatrix::zeros(k, k);
        for (a, &i) in agents.iter().enumerate() {
            let mut kept = 0.0;
            for (b, &j) in agents.iter().enumerate() {
                if i != j {
                    m[(a, b)] = self.weights[(i, j)];
                    kept += self.weights[(i, j)];
                }
            }
            m[(a, a)] = 1.0 - kept;
        }
        Ok(m)
    }

    /// Second-largest singular value of `A` or of `A(x)` restricted to `agents`.
    pub fn contraction_rate(&self, restricted_to: Option<&[usize]>) -> Result<f64> {
        let m = match restricted_to {
            None => self.weights.clone(),
            Some(agents) => {
                if !self.is_connected_on(agents) {
                    return Err(Error::Connectivity(format!(
                        "restriction to agents {agents:?} is disconnected"
                    )));
                }
                self.restricted_matrix(agents)?
            }
        };
        Ok(second_singular_value(&m))
    }
}

/// Spectral norm of `M − 11ᵀ/n` for a symmetric doubly stochastic `M`.
pub fn second_singular_value(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return 0.0;
    }
    let deflated = m - DMatrix::from_element(n, n, 1.0 / n as f64);
    let sym = (&deflated + deflated.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = BTreeSet::new();
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::layout(format!("edge ({i},{j}) references an agent outside 0..{n}")));
        }
        if i != j {
            out.insert((i.min(j), i.max(j)));
        }
    }
    let out: Vec<_> = out.into_iter().collect();
    if !is_connected(n, &out, &(0..n).collect::<Vec<_>>()) {
        return Err(Error::Connectivity("network is not connected".into()));
    }
    Ok(out)
}

/// `V(x)` and `E(x)` for every variable.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableSubgraphIndex {
    agents: Vec<Vec<usize>>,
    edges: Vec<Vec<(usize, usize)>>,
}

impl VariableSubgraphIndex {
    pub fn agents(&self, var: VarId) -> &[usize] {
        &self.agents[var.0]
    }

    pub fn edges(&self, var: VarId) -> &[(usize, usize)] {
        &self.edges[var.0]
    }

    pub fn n_vars(&self) -> usize {
        self.agents.len()
    }
}

/// Checks that the holders of each variable induce a connected subgraph.
pub fn validate_marginal_consensus(layout: &VariableLayout, network: &Network) -> Result<VariableSubgraphIndex> {
    if layout.n_agents() != network.n() {
        return Err(Error::layout(format!(
            "layout has {} agents but network has {}",
            layout.n_agents(),
            network.n()
        )));
    }
    let mut agents = Vec::with_capacity(layout.n_vars());
    let mut edges = Vec::with_capacity(layout.n_vars());
    for v in 0..layout.n_vars() {
        let id = VarId(v);
        let owners = layout.owners(id);
        if !network.is_connected_on(&owners) {
            return Err(Error::Assignment { variable: layout.name(id).to_string() });
        }
        let e: Vec<(usize, usize)> = network
            .edges()
            .into_iter()
            .filter(|(i, j)| owners.contains(i) && owners.contains(j))
            .collect();
        agents.push(owners);
        edges.push(e);
    }
    Ok(VariableSubgraphIndex { agents, edges })
}
