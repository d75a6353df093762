//! Graphs, datasets and the perturbations used by the robustness harness.
//!
//! Graphs are undirected and unweighted, stored both as a sorted edge list
//! and a dense symmetric adjacency matrix. Dense storage is deliberate: the
//! structure-refinement math downstream is dense, and everything here runs
//! at desk scale.

mod io;
mod perturb;
mod sbm;

pub use io::{load_dataset, save_dataset, LoadWarnings, LoadedDataset};
pub use perturb::{drop_edges, perturb_features, targeted_attack, AttackOutcome, EdgeFlip};
pub use sbm::{generate_sbm, SbmParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SYMMETRY_TOL: f64 = 1e-12;

/// Undirected simple graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Unordered pairs stored as (u, v) with u < v, sorted.
    edges: Vec<(usize, usize)>,
    adjacency: Matrix,
}

impl Graph {
    /// Build from clean edges: every pair in range, no self-loops, no
    /// duplicates (in either orientation).
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidInput(format!(
                    "edge ({u},{v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop at node {u}")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        if norm.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate edge".into()));
        }
        let mut adjacency = Matrix::zeros(num_nodes, num_nodes);
        for &(u, v) in &norm {
            adjacency[(u, v)] = 1.0;
            adjacency[(v, u)] = 1.0;
        }
        Ok(Graph {
            num_nodes,
            edges: norm,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[(u, v)] > 0.0
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row(v).iter().filter(|&&x| x > 0.0).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    /// Vol(G) = sum of all degrees = 2|E|.
    pub fn volume(&self) -> u64 {
        2 * self.edges.len() as u64
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.adjacency
            .row(v)
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(u, _)| u)
            .collect()
    }

    /// Adjacency lists for all nodes at once.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            lists[u].push(v);
            lists[v].push(u);
        }
        lists
    }
}

/// A graph together with node features, labels and a domain tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Matrix,
    /// Per-node class index; `None` marks unlabeled nodes.
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub domain_id: String,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        domain_id: impl Into<String>,
    ) -> Result<Dataset> {
        if features.rows() != graph.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "feature rows {} != node count {}",
                features.rows(),
                graph.num_nodes()
            )));
        }
        if labels.len() != graph.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "label count {} != node count {}",
                labels.len(),
                graph.num_nodes()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c >= num_classes {
                    return Err(Error::InvalidInput(format!(
                        "label {c} at node {i} out of range [0,{num_classes})"
                    )));
                }
            }
        }
        Ok(Dataset {
            graph,
            features,
            labels,
            num_classes,
            domain_id: domain_id.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.labels[v].is_some())
            .collect()
    }

    /// Replaces the graph, keeping features/labels/domain.
    pub fn with_graph(&self, graph: Graph) -> Result<Dataset> {
        Dataset::new(
            graph,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            self.domain_id.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Evasion,
    Poisoning,
}

/// One perturbation setting of the robustness protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationSpec {
    /// X + rate * col_std(X) ⊙ eps, eps ~ N(0,1).
    FeatureGaussian { rate: f64, seed: u64 },
    /// Remove round(rate * |E|) edges uniformly.
    EdgeDrop { rate: f64, seed: u64 },
    /// Greedy margin attack with `budget` structure flips per attacked node.
    Targeted {
        budget: usize,
        mode: AttackMode,
        seed: u64,
    },
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PerturbationSpec::FeatureGaussian { rate, .. }
            | PerturbationSpec::EdgeDrop { rate, .. } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::InvalidInput(format!(
                        "perturbation rate {rate} outside [0,1]"
                    )));
                }
            }
            PerturbationSpec::Targeted { budget, .. } => {
                if *budget < 1 {
                    return Err(Error::InvalidInput("attack budget must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Short label used in report rows.
    pub fn label(&self) -> String {
        match self {
            PerturbationSpec::FeatureGaussian { rate, .. } => format!("feat-{rate}"),
            PerturbationSpec::EdgeDrop { rate, .. } => format!("struct-{rate}"),
            PerturbationSpec::Targeted { budget, mode, .. } => {
                let m = match mode {
                    AttackMode::Evasion => "evas",
                    AttackMode::Poisoning => "pois",
                };
                format!("{m}-{budget}")
            }
        }
    }
}

/// D^{-1/2} (A + I?) D^{-1/2} for an arbitrary non-negative symmetric
/// matrix; rows with zero degree stay zero.
pub fn normalize_matrix(a: &Matrix, add_self_loops: bool) -> Matrix {
    let n = a.rows();
    let mut work = a.clone();
    if add_self_loops {
        for i in 0..n {
            work[(i, i)] += 1.0;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| work.row(i).iter().sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = work[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    out
}

/// Symmetrically normalized adjacency of a graph.
pub fn normalized_adjacency(graph: &Graph, add_self_loops: bool) -> Matrix {
    normalize_matrix(graph.adjacency(), add_self_loops)
}

/// Induced subgraph on all nodes within `radius` hops of `center`. Node 0 of
/// the result is the center; the remaining nodes keep ascending original
/// order. The returned dataset's graph-level label is the center's label
/// (node 0), so an unlabeled center is an error.
pub fn extract_ego_graph(dataset: &Dataset, center: usize, radius: usize) -> Result<Dataset> {
    if center >= dataset.num_nodes() {
        return Err(Error::InvalidInput(format!(
            "center {center} out of range"
        )));
    }
    if radius < 1 {
        return Err(Error::InvalidInput("radius must be >= 1".into()));
    }
    if dataset.labels[center].is_none() {
        return Err(Error::InvalidInput(format!(
            "center {center} is unlabeled but ego-graphs inherit the center label"
        )));
    }
    let nodes = ego_nodes(&dataset.graph, center, radius);
    let mut new_index = vec![usize::MAX; dataset.num_nodes()];
    for (i, &v) in nodes.iter().enumerate() {
        new_index[v] = i;
    }
    let mut edges = Vec::new();
    for &(u, v) in dataset.graph.edges() {
        if new_index[u] != usize::MAX && new_index[v] != usize::MAX {
            edges.push((new_index[u], new_index[v]));
        }
    }
    let graph = Graph::new(nodes.len(), &edges)?;
    let mut features = Matrix::zeros(nodes.len(), dataset.features.cols());
    let mut labels = Vec::with_capacity(nodes.len());
    for (i, &v) in nodes.iter().enumerate() {
        features.row_mut(i).copy_from_slice(dataset.features.row(v));
        labels.push(dataset.labels[v]);
    }
    Dataset::new(
        graph,
        features,
        labels,
        dataset.num_classes,
        dataset.domain_id.clone(),
    )
}

/// BFS ball: center first, then the other members ascending.
pub fn ego_nodes(graph: &Graph, center: usize, radius: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    dist[center] = 0;
    let mut queue = std::collections::VecDeque::from([center]);
    while let Some(v) = queue.pop_front() {
        if dist[v] == radius {
            continue;
        }
        for u in graph.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let mut rest: Vec<usize> = (0..graph.num_nodes())
        .filter(|&v| v != center && dist[v] != usize::MAX)
        .collect();
    rest.sort_unstable();
    let mut nodes = vec![center];
    nodes.extend(rest);
    nodes
}
