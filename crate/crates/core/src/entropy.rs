//! Two-level encoding trees by greedy structural entropy minimization.
//!
//! The minimized objective is the two-dimensional structural entropy: the
//! one-level partition entropy alone is degenerate (a single cluster scores
//! zero), so the cut-corrected form is what the optimizer descends on, while
//! the plain partition entropy stays available as a reported metric.
//!
//! The optimizer interleaves node-moving sweeps with cluster dissolution
//! attempts. Plain node moving provably stalls on two cliques joined by a
//! bridge — escaping needs two coordinated moves — and dissolving a cluster
//! (sending each member to its best other neighboring cluster, keeping the
//! batch only on strict improvement) supplies exactly that escape while
//! preserving monotone descent.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;

const IMPROVE_EPS: f64 = 1e-12;

/// A flat clustering of the node set with volume and cut bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    assignment: Vec<usize>,
    num_clusters: usize,
    /// Sum of member degrees per cluster; integers, so Σ volumes = 2|E| holds
    /// exactly.
    volumes: Vec<u64>,
    /// Edges with exactly one endpoint in the cluster.
    cuts: Vec<u64>,
}

impl Partition {
    /// Build from a compact assignment (every index in [0,K) used at least
    /// once).
    pub fn from_assignment(graph: &Graph, assignment: Vec<usize>) -> Result<Partition> {
        if assignment.len() != graph.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "assignment length {} != node count {}",
                assignment.len(),
                graph.num_nodes()
            )));
        }
        let k = match assignment.iter().max() {
            Some(&m) => m + 1,
            None => 0,
        };
        let mut used = vec![false; k];
        for &c in &assignment {
            used[c] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidInput(
                "assignment skips a cluster index".into(),
            ));
        }
        let mut volumes = vec![0u64; k];
        let mut cuts = vec![0u64; k];
        for (v, &c) in assignment.iter().enumerate() {
            volumes[c] += graph.degree(v) as u64;
        }
        for &(u, v) in graph.edges() {
            if assignment[u] != assignment[v] {
                cuts[assignment[u]] += 1;
                cuts[assignment[v]] += 1;
            }
        }
        Ok(Partition {
            assignment,
            num_clusters: k,
            volumes,
            cuts,
        })
    }

    /// All nodes in one cluster.
    pub fn single_cluster(graph: &Graph) -> Partition {
        Partition::from_assignment(graph, vec![0; graph.num_nodes()]).unwrap()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn volumes(&self) -> &[u64] {
        &self.volumes
    }

    pub fn cuts(&self) -> &[u64] {
        &self.cuts
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(v, _)| v)
            .collect()
    }
}

/// Root -> clusters -> nodes, with per-leaf member lists kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingTree {
    partition: Partition,
    members: Vec<Vec<usize>>,
}

impl EncodingTree {
    pub fn new(partition: Partition) -> EncodingTree {
        let mut members = vec![Vec::new(); partition.num_clusters()];
        for (v, &c) in partition.assignment().iter().enumerate() {
            members[c].push(v);
        }
        // enumeration order is already ascending
        EncodingTree { partition, members }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn num_clusters(&self) -> usize {
        self.partition.num_clusters()
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }
}

/// Leaf lookup: (cluster index, sorted member list, cluster size).
pub fn cluster_members(tree: &EncodingTree, node: usize) -> Result<(usize, &[usize], usize)> {
    if node >= tree.partition.assignment().len() {
        return Err(Error::InvalidInput(format!("node {node} out of range")));
    }
    let c = tree.partition.cluster_of(node);
    let members = tree.members(c);
    Ok((c, members, members.len()))
}

/// One-level partition entropy: -Σ_k (Vol_k/Vol) ln(Vol_k/Vol), with the
/// 0·ln 0 := 0 convention for empty-volume clusters.
pub fn partition_entropy(graph: &Graph, partition: &Partition) -> Result<f64> {
    let vol = graph.volume();
    if vol == 0 {
        return Err(Error::EdgelessGraph);
    }
    let vol = vol as f64;
    let mut h = 0.0;
    for &vk in partition.volumes() {
        if vk > 0 {
            let p = vk as f64 / vol;
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Two-dimensional structural entropy:
/// -Σ_k Σ_{v∈C_k} (d_v/Vol) ln(d_v/Vol_k) - Σ_k (g_k/Vol) ln(Vol_k/Vol).
pub fn structural_entropy_2d(graph: &Graph, partition: &Partition) -> Result<f64> {
    let vol = graph.volume();
    if vol == 0 {
        return Err(Error::EdgelessGraph);
    }
    let vol = vol as f64;
    let degrees = graph.degrees();
    let mut h = 0.0;
    for v in 0..graph.num_nodes() {
        let d = degrees[v] as f64;
        if d > 0.0 {
            let vk = partition.volumes()[partition.cluster_of(v)] as f64;
            h -= (d / vol) * (d / vk).ln();
        }
    }
    for k in 0..partition.num_clusters() {
        let vk = partition.volumes()[k] as f64;
        let gk = partition.cuts()[k] as f64;
        if vk > 0.0 && gk > 0.0 {
            h -= (gk / vol) * (vk / vol).ln();
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub pass: usize,
    pub move_count: usize,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub partition: Partition,
    pub trace: Vec<TracePoint>,
}

impl MinimizeOutcome {
    pub fn into_partition(self) -> Partition {
        self.partition
    }
}

/// Greedy minimizer of [`structural_entropy_2d`]. Starts from singleton
/// clusters; each pass repeatedly applies the single globally best
/// strictly-improving node move (ties broken by smallest node id, then
/// smallest destination cluster label) and then attempts cluster
/// dissolutions. Steepest descent keeps the trajectory
/// permutation-equivariant; the dissolution step supplies the coordinated
/// two-node escapes plain node moving cannot make. The result is relabeled
/// to a compact range ordered by smallest member id.
///
/// Deterministic: the `seed` parameter is accepted for interface stability
/// but the tie rules above never consult it.
pub fn minimize_structural_entropy(
    graph: &Graph,
    max_passes: usize,
    _seed: u64,
) -> Result<MinimizeOutcome> {
    if graph.volume() == 0 {
        return Err(Error::EdgelessGraph);
    }
    if max_passes < 1 {
        return Err(Error::InvalidInput("max_passes must be >= 1".into()));
    }
    let mut state = MoveState::new(graph);
    let mut trace = Vec::new();

    for pass in 0..max_passes {
        let mut changes = 0usize;
        while state.apply_steepest_move() {
            changes += 1;
        }
        changes += state.dissolution_round();
        trace.push(TracePoint {
            pass,
            move_count: changes,
            objective: state.objective(),
        });
        if changes == 0 {
            break;
        }
    }

    let assignment = state.compact_assignment();
    let partition = Partition::from_assignment(graph, assignment)?;
    Ok(MinimizeOutcome { partition, trace })
}

/// Incremental bookkeeping for the minimizer. The surrogate it descends on
/// is Σ_k (Vol_k - g_k) ln Vol_k + g_k ln Vol, which equals
/// Vol·H2 + Σ_v d_v ln d_v (a constant), so descent transfers to H2.
struct MoveState<'g> {
    graph: &'g Graph,
    neighbors: Vec<Vec<usize>>,
    degree: Vec<u64>,
    vol_total: f64,
    log_vol: f64,
    assign: Vec<usize>,
    vol: Vec<u64>,
    cut: Vec<u64>,
    const_term: f64,
}

impl<'g> MoveState<'g> {
    fn new(graph: &'g Graph) -> Self {
        let n = graph.num_nodes();
        let neighbors = graph.adjacency_lists();
        let degree: Vec<u64> = neighbors.iter().map(|l| l.len() as u64).collect();
        let vol_total = graph.volume() as f64;
        let const_term: f64 = degree
            .iter()
            .filter(|&&d| d > 0)
            .map(|&d| d as f64 * (d as f64).ln())
            .sum();
        MoveState {
            graph,
            degree: degree.clone(),
            neighbors,
            vol_total,
            log_vol: vol_total.ln(),
            assign: (0..n).collect(),
            vol: degree.clone(),
            cut: degree,
            const_term,
        }
    }

    fn term(&self, vk: u64, gk: u64) -> f64 {
        if vk == 0 {
            return 0.0;
        }
        (vk - gk) as f64 * (vk as f64).ln() + gk as f64 * self.log_vol
    }

    fn surrogate(&self) -> f64 {
        (0..self.vol.len())
            .map(|k| self.term(self.vol[k], self.cut[k]))
            .sum()
    }

    fn objective(&self) -> f64 {
        (self.surrogate() - self.const_term) / self.vol_total
    }

    /// Edge counts from node v into each adjacent cluster.
    fn links_to_clusters(&self, v: usize) -> Vec<(usize, u64)> {
        let mut counts: Vec<(usize, u64)> = Vec::new();
        for &u in &self.neighbors[v] {
            let c = self.assign[u];
            match counts.iter_mut().find(|(k, _)| *k == c) {
                Some((_, n)) => *n += 1,
                None => counts.push((c, 1)),
            }
        }
        counts.sort_unstable();
        counts
    }

    fn move_delta(&self, v: usize, dest: usize, links: &[(usize, u64)]) -> f64 {
        let src = self.assign[v];
        let d = self.degree[v];
        let e_src = links
            .iter()
            .find(|(k, _)| *k == src)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        let e_dst = links
            .iter()
            .find(|(k, _)| *k == dest)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        let src_v = self.vol[src] - d;
        let src_g = self.cut[src] + 2 * e_src - d;
        let dst_v = self.vol[dest] + d;
        let dst_g = self.cut[dest] + d - 2 * e_dst;
        self.term(src_v, src_g) - self.term(self.vol[src], self.cut[src])
            + self.term(dst_v, dst_g)
            - self.term(self.vol[dest], self.cut[dest])
    }

    fn apply_move(&mut self, v: usize, dest: usize, links: &[(usize, u64)]) {
        let src = self.assign[v];
        let d = self.degree[v];
        let e_src = links
            .iter()
            .find(|(k, _)| *k == src)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        let e_dst = links
            .iter()
            .find(|(k, _)| *k == dest)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        self.vol[src] -= d;
        self.cut[src] = self.cut[src] + 2 * e_src - d;
        self.vol[dest] += d;
        self.cut[dest] = self.cut[dest] + d - 2 * e_dst;
        self.assign[v] = dest;
    }

    /// Apply the single globally best strictly-improving move; returns true
    /// if one was applied. Ties go to the smallest (node id, destination
    /// label) because nodes and destinations are scanned ascending and only
    /// a strictly better delta displaces the incumbent.
    fn apply_steepest_move(&mut self) -> bool {
        let mut best: Option<(f64, usize, usize)> = None;
        for v in 0..self.assign.len() {
            if self.degree[v] == 0 {
                continue;
            }
            let links = self.links_to_clusters(v);
            let src = self.assign[v];
            for &(dest, _) in &links {
                if dest == src {
                    continue;
                }
                let delta = self.move_delta(v, dest, &links);
                if delta < -IMPROVE_EPS {
                    let better = match best {
                        None => true,
                        Some((bd, _, _)) => delta < bd - IMPROVE_EPS,
                    };
                    if better {
                        best = Some((delta, v, dest));
                    }
                }
            }
        }
        if let Some((_, v, dest)) = best {
            let links = self.links_to_clusters(v);
            self.apply_move(v, dest, &links);
            true
        } else {
            false
        }
    }

    /// Attempt to dissolve every multi-node cluster: each member moves to
    /// its best other neighboring cluster in turn; keep the batch only if
    /// the net change is strictly negative. Returns the number of accepted
    /// dissolutions.
    fn dissolution_round(&mut self) -> usize {
        let mut accepted = 0;
        let labels: Vec<usize> = {
            let mut seen: Vec<(usize, usize)> = Vec::new(); // (smallest member, label)
            for (v, &c) in self.assign.iter().enumerate() {
                if !seen.iter().any(|(_, l)| *l == c) {
                    seen.push((v, c));
                }
            }
            seen.sort_unstable();
            seen.into_iter().map(|(_, l)| l).collect()
        };
        for c in labels {
            let members: Vec<usize> = (0..self.assign.len())
                .filter(|&v| self.assign[v] == c)
                .collect();
            if members.len() < 2 {
                continue;
            }
            let snapshot = (self.assign.clone(), self.vol.clone(), self.cut.clone());
            let mut total = 0.0;
            let mut feasible = true;
            for &v in &members {
                let links = self.links_to_clusters(v);
                let src = self.assign[v];
                let mut best: Option<(f64, usize)> = None;
                for &(dest, _) in &links {
                    if dest == src {
                        continue;
                    }
                    let delta = self.move_delta(v, dest, &links);
                    let better = match best {
                        None => true,
                        Some((bd, _)) => delta < bd - IMPROVE_EPS,
                    };
                    if better {
                        best = Some((delta, dest));
                    }
                }
                match best {
                    Some((delta, dest)) => {
                        self.apply_move(v, dest, &links);
                        total += delta;
                    }
                    None => {
                        feasible = false;
                        break;
                    }
                }
            }
            if feasible && total < -IMPROVE_EPS {
                accepted += 1;
            } else {
                let (a, v, g) = snapshot;
                self.assign = a;
                self.vol = v;
                self.cut = g;
            }
        }
        accepted
    }

    /// Relabel to 0..K ordered by smallest member id.
    fn compact_assignment(&self) -> Vec<usize> {
        let mut mapping: Vec<Option<usize>> = vec![None; self.graph.num_nodes()];
        let mut next = 0usize;
        let mut out = vec![0usize; self.assign.len()];
        for (v, &c) in self.assign.iter().enumerate() {
            let label = match mapping[c] {
                Some(l) => l,
                None => {
                    let l = next;
                    mapping[c] = Some(l);
                    next += 1;
                    l
                }
            };
            out[v] = label;
        }
        out
    }
}

pub fn write_partition_csv(partition: &Partition, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "node_id,cluster_id")?;
    for (v, &c) in partition.assignment().iter().enumerate() {
        writeln!(f, "{v},{c}")?;
    }
    Ok(())
}

pub fn write_trace_csv(trace: &[TracePoint], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "pass,move_count,objective")?;
    for t in trace {
        writeln!(f, "{},{},{}", t.pass, t.move_count, t.objective)?;
    }
    Ok(())
}
