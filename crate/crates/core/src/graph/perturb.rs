//! Feature noise, random edge removal, and the greedy targeted margin
//! attack used in place of an external attack platform.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

/// X + rate * r ⊙ eps where r is the per-column (population) standard
/// deviation of X and eps is i.i.d. standard normal. Constant columns have
/// zero reference amplitude and pass through unchanged.
pub fn perturb_features(features: &Matrix, rate: f64, seed: u64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("rate {rate} outside [0,1]")));
    }
    if rate == 0.0 {
        return Ok(features.clone());
    }
    let (n, d) = features.shape();
    let mut col_std = vec![0.0; d];
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| features[(i, j)]).sum::<f64>() / n as f64;
        let var: f64 = (0..n)
            .map(|i| (features[(i, j)] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        col_std[j] = var.sqrt();
    }
    let mut rng = rng_from_seed(seed);
    let mut out = features.clone();
    for i in 0..n {
        for j in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            out[(i, j)] += rate * col_std[j] * eps;
        }
    }
    Ok(out)
}

/// Noise restricted to the given rows; reference amplitudes still come from
/// the full matrix.
pub fn perturb_features_rows(
    features: &Matrix,
    rows: &[usize],
    rate: f64,
    seed: u64,
) -> Result<Matrix> {
    let noisy = perturb_features(features, rate, seed)?;
    let mut out = features.clone();
    for &i in rows {
        out.row_mut(i).copy_from_slice(noisy.row(i));
    }
    Ok(out)
}

/// Remove exactly round-half-even(rate * |E|) distinct edges, chosen
/// uniformly without replacement.
pub fn drop_edges(graph: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("rate {rate} outside [0,1]")));
    }
    let m = graph.num_edges();
    let k = (rate * m as f64).round_ties_even() as usize;
    let k = k.min(m);
    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let mut rng = rng_from_seed(seed);
    edges.shuffle(&mut rng);
    let kept = &edges[k..];
    Graph::new(graph.num_nodes(), kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeFlip {
    /// true: edge (target, node) was added; false: removed.
    pub added: bool,
    pub node: usize,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub dataset: Dataset,
    pub flips: Vec<EdgeFlip>,
    pub margin_before: f64,
    pub margin_after: f64,
}

/// Surrogate margin of the target under a one-hop propagation of the given
/// per-node class scores: scores are mixed through the self-looped
/// symmetric-normalized adjacency row of the target, and the margin is
/// (true-class score) - (best other class score).
pub fn surrogate_margin(
    graph: &Graph,
    scores: &Matrix,
    target: usize,
    true_class: usize,
) -> f64 {
    let n = graph.num_nodes();
    let deg_t = graph.degree(target) as f64 + 1.0;
    let mut prop = vec![0.0; scores.cols()];
    for j in 0..n {
        let a = if j == target {
            1.0
        } else if graph.has_edge(target, j) {
            1.0
        } else {
            0.0
        };
        if a == 0.0 {
            continue;
        }
        let deg_j = graph.degree(j) as f64 + 1.0;
        let w = a / (deg_t * deg_j).sqrt();
        for (p, &s) in prop.iter_mut().zip(scores.row(j)) {
            *p += w * s;
        }
    }
    let mut best_other = f64::NEG_INFINITY;
    for (c, &p) in prop.iter().enumerate() {
        if c != true_class {
            best_other = best_other.max(p);
        }
    }
    prop[true_class] - best_other
}

/// Greedy targeted structure attack: up to `budget` single-edge flips
/// incident to the target, each step taking the flip that most decreases the
/// surrogate margin (recomputed after every flip). Exact ties are broken by
/// a seeded draw. Stops early when no candidate flip remains.
pub fn targeted_attack(
    dataset: &Dataset,
    surrogate_scores: &Matrix,
    target: usize,
    budget: usize,
    seed: u64,
) -> Result<AttackOutcome> {
    if budget < 1 {
        return Err(Error::InvalidInput("attack budget must be >= 1".into()));
    }
    if target >= dataset.num_nodes() {
        return Err(Error::InvalidInput(format!("target {target} out of range")));
    }
    if surrogate_scores.rows() != dataset.num_nodes() || surrogate_scores.cols() < 2 {
        return Err(Error::InvalidInput(
            "surrogate score matrix must be N x C with C >= 2".into(),
        ));
    }
    let true_class = dataset.labels[target].ok_or_else(|| {
        Error::InvalidInput(format!("attack target {target} is unlabeled"))
    })?;

    let mut graph = dataset.graph.clone();
    let margin_before = surrogate_margin(&graph, surrogate_scores, target, true_class);
    let mut rng = rng_from_seed(seed);
    let mut flips = Vec::new();

    for step in 0..budget {
        let mut candidates: Vec<EdgeFlip> = Vec::new();
        for j in 0..graph.num_nodes() {
            if j == target {
                continue;
            }
            candidates.push(EdgeFlip {
                added: !graph.has_edge(target, j),
                node: j,
            });
        }
        if candidates.is_empty() {
            if step == 0 {
                return Err(Error::AttackInfeasible(format!(
                    "target {target} has no flippable edges and no addable candidates"
                )));
            }
            break;
        }
        let current = surrogate_margin(&graph, surrogate_scores, target, true_class);
        let mut best_margin = f64::INFINITY;
        let mut best: Vec<EdgeFlip> = Vec::new();
        for &flip in &candidates {
            let flipped = apply_flip(&graph, target, flip)?;
            let m = surrogate_margin(&flipped, surrogate_scores, target, true_class);
            if m < best_margin - 1e-12 {
                best_margin = m;
                best = vec![flip];
            } else if (m - best_margin).abs() <= 1e-12 {
                best.push(flip);
            }
        }
        // only strictly margin-decreasing flips count as available
        if best_margin >= current - 1e-12 {
            break;
        }
        let chosen = best[rng.random_range(0..best.len())];
        graph = apply_flip(&graph, target, chosen)?;
        flips.push(chosen);
    }

    let margin_after = surrogate_margin(&graph, surrogate_scores, target, true_class);
    Ok(AttackOutcome {
        dataset: dataset.with_graph(graph)?,
        flips,
        margin_before,
        margin_after,
    })
}

fn apply_flip(graph: &Graph, target: usize, flip: EdgeFlip) -> Result<Graph> {
    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let key = (target.min(flip.node), target.max(flip.node));
    if flip.added {
        edges.push(key);
    } else {
        edges.retain(|&e| e != key);
    }
    Graph::new(graph.num_nodes(), &edges)
}
