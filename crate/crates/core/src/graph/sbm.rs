//! Stochastic block model domains: the desk-scale stand-in for benchmark
//! datasets. Classes occupy contiguous index ranges; features are per-class
//! Gaussians with means separated along distinct coordinate axes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
    pub seed: u64,
    /// Requesting p_in < p_out builds a graph with inverted community
    /// structure; refuse unless explicitly asked for.
    #[serde(default)]
    pub allow_inverted: bool,
}

/// Class sizes: floor(N/C) each, remainder spread over the first classes.
pub fn block_sizes(num_nodes: usize, num_classes: usize) -> Vec<usize> {
    let base = num_nodes / num_classes;
    let rem = num_nodes % num_classes;
    (0..num_classes)
        .map(|c| base + usize::from(c < rem))
        .collect()
}

pub fn generate_sbm(params: &SbmParams) -> Result<Dataset> {
    if params.num_classes == 0 || params.num_nodes == 0 {
        return Err(Error::InvalidInput("empty SBM requested".into()));
    }
    for (name, p) in [("p_in", params.p_in), ("p_out", params.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("{name} = {p} outside [0,1]")));
        }
    }
    if params.p_in < params.p_out && !params.allow_inverted {
        return Err(Error::InvalidInput(
            "p_in < p_out requests degenerate community structure; set allow_inverted".into(),
        ));
    }

    let sizes = block_sizes(params.num_nodes, params.num_classes);
    let mut labels = Vec::with_capacity(params.num_nodes);
    for (c, &s) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(Some(c)).take(s));
    }

    let mut rng = rng_from_seed(params.seed);
    let mut edges = Vec::new();
    for u in 0..params.num_nodes {
        for v in (u + 1)..params.num_nodes {
            let p = if labels[u] == labels[v] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(params.num_nodes, &edges)?;

    let mut features = Matrix::zeros(params.num_nodes, params.feature_dim);
    for v in 0..params.num_nodes {
        let c = labels[v].unwrap();
        let axis = c % params.feature_dim;
        for j in 0..params.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if j == axis {
                params.class_mean_separation
            } else {
                0.0
            };
            features[(v, j)] = mean + noise;
        }
    }

    Dataset::new(
        graph,
        features,
        labels,
        params.num_classes,
        format!("sbm-{}", params.seed),
    )
}
