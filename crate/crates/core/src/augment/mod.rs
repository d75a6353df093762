//! Structure-aware semantic augmentation: encoding-tree context rendered as
//! per-node prompts, embedded by a text encoder, aligned by truncated SVD
//! and concatenated with the SVD-aligned raw features.

mod svd;
mod text;

pub use svd::truncated_svd;
pub use text::{encode_text_hashed, encode_text_remote, EncoderKind, TextEncoder};

use crate::entropy::{cluster_members, EncodingTree};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_MAX_LISTED_PEERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct PromptText {
    pub node: usize,
    pub text: String,
}

/// Renders the cluster-context sentence for one node: the node itself is
/// listed first, then up to `max_listed_peers` other members ascending, with
/// an ellipsis only when the member list was truncated.
pub fn generate_prompt(
    tree: &EncodingTree,
    node: usize,
    max_listed_peers: usize,
) -> Result<PromptText> {
    let (cluster, members, size) = cluster_members(tree, node)?;
    let k = tree.num_clusters();
    let mut listed: Vec<String> = vec![format!("v{node}")];
    let mut truncated = false;
    let mut taken = 0;
    for &m in members {
        if m == node {
            continue;
        }
        if taken == max_listed_peers {
            truncated = true;
            break;
        }
        listed.push(format!("v{m}"));
        taken += 1;
    }
    let mut list = listed.join(", ");
    if truncated {
        list.push_str(", ...");
    }
    let text = format!(
        "There are {k} structural clusters. Node v{node} belongs to cluster C{cluster}, \
         which contains {size} nodes, including {list}."
    );
    Ok(PromptText { node, text })
}

/// Prompts for every node in index order.
pub fn generate_prompts(tree: &EncodingTree, max_listed_peers: usize) -> Result<Vec<PromptText>> {
    let n = tree.partition().assignment().len();
    (0..n)
        .map(|v| generate_prompt(tree, v, max_listed_peers))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedFeatures {
    /// N x (2 d0): SVD-aligned raw block then SVD-aligned prompt block.
    pub matrix: Matrix,
    pub d0: usize,
}

impl AugmentedFeatures {
    pub fn width(&self) -> usize {
        self.matrix.cols()
    }
}

/// x'_i = SVD_d0(X) row i ⊕ SVD_d0(prompt embeddings) row i.
pub fn augment_features(
    features: &Matrix,
    prompts: &[PromptText],
    encoder: &TextEncoder,
    d0: usize,
) -> Result<AugmentedFeatures> {
    let n = features.rows();
    if prompts.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} prompts for {n} nodes",
            prompts.len()
        )));
    }
    for (i, p) in prompts.iter().enumerate() {
        if p.node != i {
            return Err(Error::InvalidInput(format!(
                "prompt {i} is for node {}, expected node order",
                p.node
            )));
        }
    }
    if d0 > n.min(features.cols()) {
        return Err(Error::InvalidInput(format!(
            "d0 = {d0} exceeds min(N={n}, d={})",
            features.cols()
        )));
    }
    if d0 > n.min(encoder.output_dim) {
        return Err(Error::InvalidInput(format!(
            "d0 = {d0} exceeds min(N={n}, encoder dim={})",
            encoder.output_dim
        )));
    }

    let mut prompt_matrix = Matrix::zeros(n, encoder.output_dim);
    for (i, p) in prompts.iter().enumerate() {
        let v = encoder.encode(&p.text)?;
        prompt_matrix.row_mut(i).copy_from_slice(&v);
    }

    let feat_block = truncated_svd(features, d0)?;
    let prompt_block = truncated_svd(&prompt_matrix, d0)?;

    let mut matrix = Matrix::zeros(n, 2 * d0);
    for i in 0..n {
        matrix.row_mut(i)[..d0].copy_from_slice(feat_block.row(i));
        matrix.row_mut(i)[d0..].copy_from_slice(prompt_block.row(i));
    }
    Ok(AugmentedFeatures { matrix, d0 })
}

/// The ablation path: no prompts, no fusion; just the SVD-aligned raw
/// features (width d0).
pub fn raw_feature_block(features: &Matrix, d0: usize) -> Result<AugmentedFeatures> {
    let n = features.rows();
    if d0 > n.min(features.cols()) {
        return Err(Error::InvalidInput(format!(
            "d0 = {d0} exceeds min(N={n}, d={})",
            features.cols()
        )));
    }
    Ok(AugmentedFeatures {
        matrix: truncated_svd(features, d0)?,
        d0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{minimize_structural_entropy, EncodingTree, Partition};
    use crate::graph::Graph;
    use crate::nn::standard_normal;

    fn two_k4_tree() -> EncodingTree {
        let mut edges = Vec::new();
        for a in 0..4usize {
            for b in (a + 1)..4 {
                edges.push((a, b));
            }
        }
        for a in 4..8usize {
            for b in (a + 1)..8 {
                edges.push((a, b));
            }
        }
        let g = Graph::new(8, &edges).unwrap();
        EncodingTree::new(minimize_structural_entropy(&g, 20, 0).unwrap().into_partition())
    }

    #[test]
    fn prompt_for_singleton_cluster() {
        let g = Graph::new(3, &[(1, 2)]).unwrap();
        let p = Partition::from_assignment(&g, vec![0, 1, 1]).unwrap();
        let tree = EncodingTree::new(p);
        let prompt = generate_prompt(&tree, 0, 5).unwrap();
        assert_eq!(
            prompt.text,
            "There are 2 structural clusters. Node v0 belongs to cluster C0, \
             which contains 1 nodes, including v0."
        );
    }

    #[test]
    fn prompt_lists_node_first_then_peers_ascending_with_truncation() {
        let tree = two_k4_tree();
        let prompt = generate_prompt(&tree, 2, 2).unwrap();
        assert_eq!(
            prompt.text,
            "There are 2 structural clusters. Node v2 belongs to cluster C0, \
             which contains 4 nodes, including v2, v0, v1, ...."
        );
        let full = generate_prompt(&tree, 2, 3).unwrap();
        assert!(full.text.ends_with("including v2, v0, v1, v3."));
    }

    #[test]
    fn prompt_generation_is_deterministic() {
        let tree = two_k4_tree();
        let a = generate_prompt(&tree, 5, 10).unwrap();
        let b = generate_prompt(&tree, 5, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn augmented_width_is_twice_d0() {
        let tree = two_k4_tree();
        let prompts = generate_prompts(&tree, 10).unwrap();
        let features = standard_normal(8, 6, 1);
        let enc = TextEncoder::hashed(32, 5);
        let aug = augment_features(&features, &prompts, &enc, 4).unwrap();
        assert_eq!(aug.matrix.shape(), (8, 8));
        assert_eq!(aug.d0, 4);
    }

    #[test]
    fn identical_prompts_leave_one_singular_direction() {
        let features = standard_normal(8, 6, 2);
        let prompts: Vec<PromptText> = (0..8)
            .map(|node| PromptText {
                node,
                text: "identical sentence for everyone".into(),
            })
            .collect();
        let enc = TextEncoder::hashed(32, 5);
        let aug = augment_features(&features, &prompts, &enc, 3).unwrap();
        // prompt block: rank 1, so columns 1.. of the block are zero
        for i in 0..8 {
            for k in 1..3 {
                assert!(
                    aug.matrix[(i, 3 + k)].abs() < 1e-10,
                    "({i},{k}) = {}",
                    aug.matrix[(i, 3 + k)]
                );
            }
        }
    }

    #[test]
    fn permuting_nodes_permutes_rows() {
        // row-wise: the raw-feature SVD block of a permuted matrix is the
        // permuted block (Gram matrix unchanged under row permutation)
        let features = standard_normal(6, 5, 3);
        let perm = [5usize, 3, 0, 1, 4, 2];
        let mut permuted = Matrix::zeros(6, 5);
        for (i, &pi) in perm.iter().enumerate() {
            permuted.row_mut(i).copy_from_slice(features.row(pi));
        }
        let a = truncated_svd(&features, 3).unwrap();
        let b = truncated_svd(&permuted, 3).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            for k in 0..3 {
                assert!((b[(i, k)] - a[(pi, k)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_runs_agree_exactly() {
        let tree = two_k4_tree();
        let prompts = generate_prompts(&tree, 10).unwrap();
        let features = standard_normal(8, 6, 4);
        let enc = TextEncoder::hashed(32, 5);
        let a = augment_features(&features, &prompts, &enc, 4).unwrap();
        let b = augment_features(&features, &prompts, &enc, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_count_mismatch_and_rank_errors() {
        let tree = two_k4_tree();
        let prompts = generate_prompts(&tree, 10).unwrap();
        let features = standard_normal(8, 6, 5);
        let enc = TextEncoder::hashed(32, 5);
        assert!(augment_features(&features, &prompts[..7], &enc, 4).is_err());
        assert!(augment_features(&features, &prompts, &enc, 7).is_err());
    }
}
