//! Self-supervised information-bottleneck pre-training, one expert per
//! source domain: sample structural pairs from the encoding tree, encode
//! variationally, and minimize InfoNCE + lambda_ib * KL. The returned
//! checkpoints are frozen; fine-tuning only ever reads them.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedFeatures;
use crate::entropy::Partition;
use crate::error::{Error, Result};
use crate::graph::{normalize_matrix, Dataset, Graph};
use crate::linalg::Matrix;
use crate::matio;
use crate::nn::params::{param_entries, params_digest, params_from_bytes, params_to_bytes, ParamEntry};
use crate::nn::{
    encode_variational, reparameterize_with, standard_normal, OptimConfig, Optimizer, Tape, Var,
    VariationalEncoder,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Anchor/positive/negative index sets for one contrastive epoch. Anchors
/// repeat when more than one positive is drawn per node.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub tau: f64,
    pub lambda_ib: f64,
    pub epochs: usize,
    pub lr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            tau: 0.5,
            lambda_ib: 1e-2,
            epochs: 150,
            lr: 1e-2,
            n_pos: 1,
            n_neg: 5,
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        if self.lambda_ib < 0.0 {
            return Err(Error::InvalidInput("lambda_ib must be non-negative".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidInput("lr must be positive".into()));
        }
        if self.n_pos < 1 || self.n_neg < 1 {
            return Err(Error::InvalidInput("n_pos and n_neg must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // depth and width are unstated upstream; these are the repo defaults
        EncoderConfig {
            layers: 2,
            hidden_dim: 64,
            embed_dim: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub infonce: f64,
    pub kl: f64,
    pub total: f64,
}

/// Frozen per-domain expert: encoder weights, the partition and d0 used to
/// build its inputs, the training trace, and the stored source prototype
/// (mean mu embedding over the domain's own nodes).
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertCheckpoint {
    pub domain_id: String,
    pub encoder: VariationalEncoder,
    pub d0: usize,
    pub config: PretrainConfig,
    pub partition_assignment: Vec<usize>,
    pub loss_trace: Vec<LossPoint>,
    pub prototype: Vec<f64>,
}

impl ExpertCheckpoint {
    /// SHA-256 of the serialized parameters; the frozen contract compares
    /// this before and after fine-tuning.
    pub fn digest(&self) -> String {
        params_digest(&self.encoder.named_params())
    }
}

/// Positive candidates: same-cluster nodes and direct neighbors, minus the
/// anchor. Negative candidates: nodes neither in the anchor's cluster nor
/// adjacent to it. Anchors with an empty side are skipped; anchors short on
/// negatives take the maximal available set.
pub fn sample_pairs(
    graph: &Graph,
    partition: &Partition,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<PairBatch> {
    if graph.num_nodes() < 3 {
        return Err(Error::PairSamplingInfeasible(
            "need at least 3 nodes".into(),
        ));
    }
    if n_pos < 1 || n_neg < 1 {
        return Err(Error::InvalidInput("n_pos and n_neg must be >= 1".into()));
    }
    let n = graph.num_nodes();
    let mut rng = rng_from_seed(seed);
    let mut batch = PairBatch {
        anchors: Vec::new(),
        positives: Vec::new(),
        negatives: Vec::new(),
    };
    for v in 0..n {
        let cluster = partition.cluster_of(v);
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        for u in 0..n {
            if u == v {
                continue;
            }
            let linked = graph.has_edge(v, u);
            if partition.cluster_of(u) == cluster || linked {
                pos.push(u);
            } else if !linked {
                neg.push(u);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        pos.shuffle(&mut rng);
        let take_pos = n_pos.min(pos.len());
        for &p in &pos[..take_pos] {
            let mut negs = neg.clone();
            negs.shuffle(&mut rng);
            negs.truncate(n_neg);
            negs.sort_unstable();
            batch.anchors.push(v);
            batch.positives.push(p);
            batch.negatives.push(negs);
        }
    }
    if batch.is_empty() {
        return Err(Error::PairSamplingInfeasible(
            "no node has both a positive and a negative candidate".into(),
        ));
    }
    Ok(batch)
}

/// InfoNCE over raw inner products: for each batch entry,
/// log-sum-exp over {positive} ∪ negatives minus the positive logit, meaned
/// over entries. Stabilized by constant max subtraction per entry.
pub fn info_nce_loss(tape: &mut Tape, z: Var, batch: &PairBatch, tau: f64) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty pair batch".into()));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidInput("tau must be positive".into()));
    }
    let zt = tape.transpose(z)?;
    let gram = tape.matmul(z, zt)?;
    let logits = tape.scale(gram, 1.0 / tau)?;

    let mut total: Option<Var> = None;
    for (k, &anchor) in batch.anchors.iter().enumerate() {
        let mut pairs = vec![(anchor, batch.positives[k])];
        for &neg in &batch.negatives[k] {
            pairs.push((anchor, neg));
        }
        let candidate_logits = tape.gather_pairs(logits, &pairs)?;
        let max_logit = tape
            .value(candidate_logits)
            .as_slice()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let shifted = tape.add_scalar(candidate_logits, -max_logit)?;
        let exps = tape.exp(shifted)?;
        let denom = tape.sum_all(exps)?;
        let lse_shifted = tape.log(denom)?;
        // positive logit, shifted identically: entry 0 of the gather
        let pos_shifted = tape.gather_pairs(shifted, &[(0, 0)])?;
        let entry = tape.sub(lse_shifted, pos_shifted)?;
        total = Some(match total {
            Some(t) => tape.add(t, entry)?,
            None => entry,
        });
    }
    tape.scale(total.unwrap(), 1.0 / batch.len() as f64)
}

/// Mean over nodes of 0.5 Σ_k (σ² + μ² − 1 − log σ²), the closed-form KL to
/// a standard normal prior.
pub fn kl_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let n = tape.value(mu).rows();
    let sigma2 = tape.exp(logvar)?;
    let mu2 = tape.mul(mu, mu)?;
    let sum = tape.add(sigma2, mu2)?;
    let sum = tape.add_scalar(sum, -1.0)?;
    let sum = tape.sub(sum, logvar)?;
    let total = tape.sum_all(sum)?;
    tape.scale(total, 0.5 / n as f64)
}

/// One training epoch's loss values.
struct EpochOutcome {
    infonce: f64,
    kl: f64,
    total: f64,
}

fn run_epoch(
    encoder: &mut VariationalEncoder,
    optimizer: &mut Optimizer,
    x: &Matrix,
    a_norm: &Matrix,
    batch: &PairBatch,
    config: &PretrainConfig,
    eps: Matrix,
) -> Result<EpochOutcome> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let av = tape.constant(a_norm.clone());
    let vars = encoder.insert(&mut tape, true);
    let (mu, logvar) = encode_variational(&mut tape, xv, av, &vars)?;
    let z = reparameterize_with(&mut tape, mu, logvar, eps)?;
    let infonce = info_nce_loss(&mut tape, z, batch, config.tau)?;
    let kl = kl_loss(&mut tape, mu, logvar)?;
    let kl_scaled = tape.scale(kl, config.lambda_ib)?;
    let total = tape.add(infonce, kl_scaled)?;
    tape.backward(total)?;

    let out = EpochOutcome {
        infonce: tape.value(infonce)[(0, 0)],
        kl: tape.value(kl)[(0, 0)],
        total: tape.value(total)[(0, 0)],
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite("pre-training loss".into()));
    }

    let layer_grads: Vec<Matrix> = vars
        .layers
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        }))
        .collect();
    let mu_grad = tape.grad(vars.mu_head).cloned().unwrap_or_else(|| {
        Matrix::zeros(encoder.mu_head.rows(), encoder.mu_head.cols())
    });
    let logvar_grad = tape.grad(vars.logvar_head).cloned().unwrap_or_else(|| {
        Matrix::zeros(encoder.logvar_head.rows(), encoder.logvar_head.cols())
    });

    let names: Vec<String> = encoder
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut updates: Vec<(&str, &mut Matrix, &Matrix)> = Vec::new();
    for ((w, g), name) in encoder
        .layers
        .iter_mut()
        .zip(layer_grads.iter())
        .zip(names.iter())
    {
        updates.push((name.as_str(), w, g));
    }
    updates.push(("mu_head", &mut encoder.mu_head, &mu_grad));
    updates.push(("logvar_head", &mut encoder.logvar_head, &logvar_grad));
    optimizer.step(&mut updates)?;
    Ok(out)
}

/// Deterministic mu-embedding of a dataset under a (frozen) encoder.
pub fn mu_embeddings(
    encoder: &VariationalEncoder,
    x: &Matrix,
    a_norm: &Matrix,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let av = tape.constant(a_norm.clone());
    let vars = encoder.insert(&mut tape, false);
    let (mu, _) = encode_variational(&mut tape, xv, av, &vars)?;
    Ok(tape.value(mu).clone())
}

/// Algorithm: E_p epochs of sample pairs -> variational encode ->
/// reparameterize -> InfoNCE + lambda_ib KL -> Adam step. The checkpoint is
/// frozen on return.
pub fn pretrain_domain(
    dataset: &Dataset,
    augmented: &AugmentedFeatures,
    partition: &Partition,
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
) -> Result<ExpertCheckpoint> {
    config.validate().map_err(|e| e.in_domain(&dataset.domain_id))?;
    if dataset.graph.volume() == 0 {
        return Err(Error::EdgelessGraph.in_domain(&dataset.domain_id));
    }
    if augmented.matrix.rows() != dataset.num_nodes() {
        return Err(Error::InvalidInput("augmented feature rows != N".into()));
    }

    let a_norm = normalize_matrix(dataset.graph.adjacency(), false);
    let x = &augmented.matrix;
    let mut encoder = VariationalEncoder::init(
        x.cols(),
        encoder_config.hidden_dim,
        encoder_config.embed_dim,
        encoder_config.layers,
        derive_seed(config.seed, 0x1217),
    );
    let mut optimizer = Optimizer::new(OptimConfig::adam(config.lr));
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batch = sample_pairs(
            &dataset.graph,
            partition,
            config.n_pos,
            config.n_neg,
            derive_seed(config.seed, 2 * epoch as u64),
        )
        .map_err(|e| e.in_domain(&dataset.domain_id))?;
        let eps = standard_normal(
            x.rows(),
            encoder_config.embed_dim,
            derive_seed(config.seed, 2 * epoch as u64 + 1),
        );
        let out = run_epoch(
            &mut encoder,
            &mut optimizer,
            x,
            &a_norm,
            &batch,
            config,
            eps,
        )
        .map_err(|e| {
            Error::InvalidInput(format!("epoch {epoch}: {e}")).in_domain(&dataset.domain_id)
        })?;
        loss_trace.push(LossPoint {
            epoch,
            infonce: out.infonce,
            kl: out.kl,
            total: out.total,
        });
    }

    let mu = mu_embeddings(&encoder, x, &a_norm)?;
    let prototype = mu.mean_rows(&(0..mu.rows()).collect::<Vec<_>>());

    Ok(ExpertCheckpoint {
        domain_id: dataset.domain_id.clone(),
        encoder,
        d0: augmented.d0,
        config: config.clone(),
        partition_assignment: partition.assignment().to_vec(),
        loss_trace,
        prototype,
    })
}

/// Pre-train one expert per domain, in parallel, preserving input order.
/// Each domain uses the same config (so identical domains yield identical
/// checkpoints); failures carry the domain id.
pub fn pretrain_all(
    domains: &[(Dataset, AugmentedFeatures, Partition)],
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
) -> Result<Vec<ExpertCheckpoint>> {
    if domains.is_empty() {
        return Err(Error::InvalidInput("no source domains".into()));
    }
    domains
        .par_iter()
        .map(|(ds, aug, part)| pretrain_domain(ds, aug, part, config, encoder_config))
        .collect()
}

// ---- checkpoint persistence ------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    domain_id: String,
    d0: usize,
    config: PretrainConfig,
    params: Vec<ParamEntry>,
    num_layers: usize,
    prototype: Vec<f64>,
    partition_assignment: Vec<usize>,
    loss_trace: Vec<LossPoint>,
    loss_trace_path: String,
}

pub fn save_checkpoint(ckpt: &ExpertCheckpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let named = ckpt.encoder.named_params();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        domain_id: ckpt.domain_id.clone(),
        d0: ckpt.d0,
        config: ckpt.config.clone(),
        params: param_entries(&named),
        num_layers: ckpt.encoder.layers.len(),
        prototype: ckpt.prototype.clone(),
        partition_assignment: ckpt.partition_assignment.clone(),
        loss_trace: ckpt.loss_trace.clone(),
        loss_trace_path: "loss_trace.csv".into(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(dir.join("params.bin"), params_to_bytes(&named))?;
    write_loss_trace_csv(&ckpt.loss_trace, &dir.join("loss_trace.csv"))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ExpertCheckpoint> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::UnknownVersion(manifest.version));
    }
    let blob = fs::read(dir.join("params.bin"))?;
    let mut params = params_from_bytes(&blob, &manifest.params)?;
    if params.len() != manifest.num_layers + 2 {
        return Err(Error::Integrity(format!(
            "expected {} parameter tensors, found {}",
            manifest.num_layers + 2,
            params.len()
        )));
    }
    let logvar_head = params.pop().unwrap().1;
    let mu_head = params.pop().unwrap().1;
    let layers: Vec<Matrix> = params.into_iter().map(|(_, m)| m).collect();
    Ok(ExpertCheckpoint {
        domain_id: manifest.domain_id,
        encoder: VariationalEncoder {
            layers,
            mu_head,
            logvar_head,
        },
        d0: manifest.d0,
        config: manifest.config,
        partition_assignment: manifest.partition_assignment,
        loss_trace: manifest.loss_trace,
        prototype: manifest.prototype,
    })
}

pub fn write_loss_trace_csv(trace: &[LossPoint], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,infonce,kl,total")?;
    for p in trace {
        writeln!(f, "{},{},{},{}", p.epoch, p.infonce, p.kl, p.total)?;
    }
    Ok(())
}

/// Export the mu-embeddings of a dataset under an expert; pairs the binary
/// matrix with a label CSV for downstream inspection.
pub fn export_embeddings(
    embeddings: &Matrix,
    labels: &[Option<usize>],
    stem: &Path,
) -> Result<()> {
    matio::write_matrix(stem, embeddings)?;
    let label_path = stem.with_extension("labels.csv");
    let mut f = fs::File::create(label_path)?;
    writeln!(f, "node_id,label")?;
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => writeln!(f, "{i},{c}")?,
            None => writeln!(f, "{i},-1")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{augment_features, generate_prompts, TextEncoder};
    use crate::entropy::{minimize_structural_entropy, EncodingTree};
    use crate::graph::{generate_sbm, SbmParams};

    fn disjoint_k4s_partitioned() -> (Graph, Partition) {
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
        let p = minimize_structural_entropy(&g, 20, 0).unwrap().into_partition();
        (g, p)
    }

    #[test]
    fn negatives_live_in_the_other_clique() {
        let (g, p) = disjoint_k4s_partitioned();
        let batch = sample_pairs(&g, &p, 1, 3, 1).unwrap();
        for (k, &a) in batch.anchors.iter().enumerate() {
            for &n in &batch.negatives[k] {
                assert_ne!(p.cluster_of(a), p.cluster_of(n));
                assert!(!g.has_edge(a, n));
            }
        }
    }

    #[test]
    fn isolated_singleton_node_is_not_an_anchor() {
        let mut edges = Vec::new();
        for a in 0..4usize {
            for b in (a + 1)..4 {
                edges.push((a, b));
            }
        }
        let g = Graph::new(5, &edges).unwrap(); // node 4 isolated
        let p = minimize_structural_entropy(&g, 20, 0).unwrap().into_partition();
        let batch = sample_pairs(&g, &p, 1, 2, 1).unwrap();
        assert!(!batch.anchors.contains(&4));
    }

    #[test]
    fn complete_graph_single_cluster_is_infeasible() {
        let mut edges = Vec::new();
        for a in 0..5usize {
            for b in (a + 1)..5 {
                edges.push((a, b));
            }
        }
        let g = Graph::new(5, &edges).unwrap();
        let p = Partition::single_cluster(&g);
        assert!(matches!(
            sample_pairs(&g, &p, 1, 2, 1),
            Err(Error::PairSamplingInfeasible(_))
        ));
    }

    #[test]
    fn positives_mostly_share_the_planted_block() {
        let mut total = 0usize;
        let mut hits = 0usize;
        for seed in 0..5u64 {
            let ds = generate_sbm(&SbmParams {
                num_nodes: 60,
                num_classes: 3,
                p_in: 0.6,
                p_out: 0.02,
                feature_dim: 4,
                class_mean_separation: 1.0,
                seed,
                allow_inverted: false,
            })
            .unwrap();
            let p = minimize_structural_entropy(&ds.graph, 30, 0)
                .unwrap()
                .into_partition();
            let batch = sample_pairs(&ds.graph, &p, 1, 5, seed).unwrap();
            for (k, &a) in batch.anchors.iter().enumerate() {
                total += 1;
                if ds.labels[a] == ds.labels[batch.positives[k]] {
                    hits += 1;
                }
            }
        }
        let frac = hits as f64 / total as f64;
        assert!(frac >= 0.9, "only {frac:.3} of positives share the block");
    }

    #[test]
    fn pair_sampling_is_deterministic() {
        let (g, p) = disjoint_k4s_partitioned();
        let a = sample_pairs(&g, &p, 2, 3, 9).unwrap();
        let b = sample_pairs(&g, &p, 2, 3, 9).unwrap();
        assert_eq!(a, b);
    }

    fn batch_rows(n: usize, n_neg: usize) -> PairBatch {
        // anchor i pairs with i+1 mod n; negatives drawn cyclically
        let mut batch = PairBatch {
            anchors: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        };
        for i in 0..n {
            batch.anchors.push(i);
            batch.positives.push((i + 1) % n);
            batch
                .negatives
                .push((2..2 + n_neg).map(|k| (i + k) % n).collect());
        }
        batch
    }

    #[test]
    fn symmetric_logits_give_log_candidates() {
        for n_neg in [1usize, 2, 7] {
            let n = n_neg + 3;
            let mut tape = Tape::new();
            let z = tape.constant(Matrix::ones(n, 4));
            let batch = batch_rows(n, n_neg);
            let loss = info_nce_loss(&mut tape, z, &batch, 0.7).unwrap();
            let expect = ((n_neg + 1) as f64).ln();
            let got = tape.value(loss)[(0, 0)];
            assert!(
                (got - expect).abs() < 1e-10,
                "n_neg={n_neg}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![50.0, 0.0],
            vec![0.0, 0.0],
        ]));
        let batch = PairBatch {
            anchors: vec![0],
            positives: vec![1],
            negatives: vec![vec![2]],
        };
        let loss = info_nce_loss(&mut tape, z, &batch, 1.0).unwrap();
        assert!(tape.value(loss)[(0, 0)] < 1e-10);
    }

    #[test]
    fn matches_naive_exponentiation_oracle() {
        let z_val = standard_normal(6, 3, 123);
        let batch = batch_rows(6, 2);
        let tau = 0.5;
        let mut tape = Tape::new();
        let z = tape.constant(z_val.clone());
        let loss = info_nce_loss(&mut tape, z, &batch, tau).unwrap();

        // oracle: direct exponentiation, no stabilization
        let mut total = 0.0;
        for (k, &a) in batch.anchors.iter().enumerate() {
            let sim = |i: usize, j: usize| z_val.dot_row(i, &z_val, j) / tau;
            let mut denom = (sim(a, batch.positives[k])).exp();
            for &neg in &batch.negatives[k] {
                denom += sim(a, neg).exp();
            }
            total += -((sim(a, batch.positives[k])).exp() / denom).ln();
        }
        total /= batch.len() as f64;
        let got = tape.value(loss)[(0, 0)];
        assert!((got - total).abs() < 1e-10, "{got} vs {total}");
    }

    #[test]
    fn info_nce_is_nonnegative_on_random_inputs() {
        for seed in 0..20u64 {
            let z_val = standard_normal(7, 4, seed);
            let batch = batch_rows(7, 3);
            let mut tape = Tape::new();
            let z = tape.constant(z_val);
            let loss = info_nce_loss(&mut tape, z, &batch, 0.3).unwrap();
            assert!(tape.value(loss)[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let mut tape = Tape::new();
        let mu = tape.constant(Matrix::zeros(3, 4));
        let logvar = tape.constant(Matrix::zeros(3, 4));
        let kl = kl_loss(&mut tape, mu, logvar).unwrap();
        assert_eq!(tape.value(kl)[(0, 0)], 0.0);

        let mut tape = Tape::new();
        let mu = tape.constant(Matrix::scalar(1.0));
        let logvar = tape.constant(Matrix::scalar(0.0));
        let kl = kl_loss(&mut tape, mu, logvar).unwrap();
        assert!((tape.value(kl)[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_quadrature_oracle() {
        use rand::Rng;
        let mut rng = rng_from_seed(31);
        for _ in 0..10 {
            let mu_v: f64 = rng.random_range(-2.0..2.0);
            let logvar_v: f64 = rng.random_range(-2.0..1.5);
            let mut tape = Tape::new();
            let mu = tape.constant(Matrix::scalar(mu_v));
            let logvar = tape.constant(Matrix::scalar(logvar_v));
            let kl = kl_loss(&mut tape, mu, logvar).unwrap();
            let got = tape.value(kl)[(0, 0)];

            // trapezoid quadrature of ∫ q ln(q/p) over [-12, 12]
            let sigma2 = logvar_v.exp();
            let sigma = sigma2.sqrt();
            let bins = 100_000usize;
            let (lo, hi) = (-12.0f64, 12.0f64);
            let h = (hi - lo) / bins as f64;
            let integrand = |x: f64| {
                let q = (-0.5 * ((x - mu_v) / sigma).powi(2)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                if q <= 0.0 {
                    return 0.0;
                }
                let p = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                q * (q / p).ln()
            };
            let mut acc = 0.5 * (integrand(lo) + integrand(hi));
            for i in 1..bins {
                acc += integrand(lo + i as f64 * h);
            }
            let oracle = acc * h;
            assert!(
                (got - oracle).abs() < 1e-4,
                "mu={mu_v} logvar={logvar_v}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn kl_zero_iff_standard_normal_posterior() {
        // forward: exact zero at (0, 0) checked above; backward: nonzero
        // anywhere else
        for (m, lv) in [(0.1, 0.0), (0.0, 0.1), (-0.2, -0.3)] {
            let mut tape = Tape::new();
            let mu = tape.constant(Matrix::scalar(m));
            let logvar = tape.constant(Matrix::scalar(lv));
            let kl = kl_loss(&mut tape, mu, logvar).unwrap();
            assert!(tape.value(kl)[(0, 0)] > 1e-10);
        }
    }

    fn small_domain(seed: u64) -> (Dataset, AugmentedFeatures, Partition) {
        let ds = generate_sbm(&SbmParams {
            num_nodes: 60,
            num_classes: 3,
            p_in: 0.6,
            p_out: 0.02,
            feature_dim: 8,
            class_mean_separation: 1.0,
            seed,
            allow_inverted: false,
        })
        .unwrap();
        let partition = minimize_structural_entropy(&ds.graph, 30, 0)
            .unwrap()
            .into_partition();
        let tree = EncodingTree::new(partition.clone());
        let prompts = generate_prompts(&tree, 10).unwrap();
        let enc = TextEncoder::hashed(64, 5);
        let aug = augment_features(&ds.features, &prompts, &enc, 4).unwrap();
        (ds, aug, partition)
    }

    fn tiny_config() -> (PretrainConfig, EncoderConfig) {
        (
            PretrainConfig {
                epochs: 30,
                n_neg: 4,
                ..Default::default()
            },
            EncoderConfig {
                layers: 2,
                hidden_dim: 16,
                embed_dim: 8,
            },
        )
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (ds, aug, part) = small_domain(1);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 0;
        let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        assert!(ckpt.loss_trace.is_empty());
        let init = VariationalEncoder::init(
            aug.matrix.cols(),
            enc_cfg.hidden_dim,
            enc_cfg.embed_dim,
            enc_cfg.layers,
            derive_seed(cfg.seed, 0x1217),
        );
        assert_eq!(ckpt.encoder, init);
    }

    #[test]
    fn lambda_zero_trace_totals_equal_infonce() {
        let (ds, aug, part) = small_domain(2);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.lambda_ib = 0.0;
        cfg.epochs = 10;
        let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        for p in &ckpt.loss_trace {
            assert_eq!(p.total, p.infonce);
        }
    }

    #[test]
    fn training_descends_across_seeds() {
        let mut hits = 0;
        for seed in 0..20u64 {
            let (ds, aug, part) = small_domain(seed + 100);
            let (mut cfg, enc_cfg) = tiny_config();
            cfg.seed = seed;
            cfg.epochs = 60;
            let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
            let first = ckpt.loss_trace.first().unwrap().total;
            let last = ckpt.loss_trace.last().unwrap().total;
            if last < first {
                hits += 1;
            }
        }
        assert!(hits >= 18, "descended in only {hits}/20 seeds");
    }

    #[test]
    fn identical_domains_give_identical_checkpoints() {
        let (ds, aug, part) = small_domain(3);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 5;
        let domains = vec![
            (ds.clone(), aug.clone(), part.clone()),
            (ds.clone(), aug.clone(), part.clone()),
        ];
        let out = pretrain_all(&domains, &cfg, &enc_cfg).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].digest(), out[1].digest());
    }

    #[test]
    fn single_domain_matches_pretrain_domain() {
        let (ds, aug, part) = small_domain(4);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 5;
        let solo = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        let all = pretrain_all(&[(ds, aug, part)], &cfg, &enc_cfg).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0], solo);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let (ds, aug, part) = small_domain(5);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 3;
        let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.digest(), ckpt.digest());
        // save -> load -> save produces identical bytes
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(&back, dir2.path()).unwrap();
        for file in ["manifest.json", "params.bin", "loss_trace.csv"] {
            let a = fs::read(dir.path().join(file)).unwrap();
            let b = fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs after roundtrip");
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let (ds, aug, part) = small_domain(6);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 1;
        let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::UnknownVersion(99))
        ));
    }

    #[test]
    fn corrupted_blob_rejected() {
        let (ds, aug, part) = small_domain(7);
        let (mut cfg, enc_cfg) = tiny_config();
        cfg.epochs = 1;
        let ckpt = pretrain_domain(&ds, &aug, &part, &cfg, &enc_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let blob_path = dir.path().join("params.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        blob.truncate(blob.len() - 3);
        fs::write(&blob_path, blob).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn gradient_of_total_loss_matches_finite_differences() {
        // Eq-level check on a small instance: d/dtheta of
        // InfoNCE + lambda KL for every encoder parameter entry.
        let ds = generate_sbm(&SbmParams {
            num_nodes: 10,
            num_classes: 2,
            p_in: 0.8,
            p_out: 0.1,
            feature_dim: 4,
            class_mean_separation: 1.0,
            seed: 8,
            allow_inverted: false,
        })
        .unwrap();
        let partition = minimize_structural_entropy(&ds.graph, 20, 0)
            .unwrap()
            .into_partition();
        let batch = sample_pairs(&ds.graph, &partition, 1, 2, 3).unwrap();
        let a_norm = normalize_matrix(ds.graph.adjacency(), false);
        let x = ds.features.clone();
        let encoder = VariationalEncoder::init(4, 5, 4, 2, 99);
        let eps = standard_normal(10, 4, 55);
        let lambda = 0.3;
        let tau = 0.6;

        let eval = |enc: &VariationalEncoder| -> f64 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let av = tape.constant(a_norm.clone());
            let vars = enc.insert(&mut tape, false);
            let (mu, logvar) = encode_variational(&mut tape, xv, av, &vars).unwrap();
            let z = reparameterize_with(&mut tape, mu, logvar, eps.clone()).unwrap();
            let infonce = info_nce_loss(&mut tape, z, &batch, tau).unwrap();
            let kl = kl_loss(&mut tape, mu, logvar).unwrap();
            let kls = tape.scale(kl, lambda).unwrap();
            let total = tape.add(infonce, kls).unwrap();
            tape.value(total)[(0, 0)]
        };

        // autodiff gradients
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let av = tape.constant(a_norm.clone());
        let vars = encoder.insert(&mut tape, true);
        let (mu, logvar) = encode_variational(&mut tape, xv, av, &vars).unwrap();
        let z = reparameterize_with(&mut tape, mu, logvar, eps.clone()).unwrap();
        let infonce = info_nce_loss(&mut tape, z, &batch, tau).unwrap();
        let kl = kl_loss(&mut tape, mu, logvar).unwrap();
        let kls = tape.scale(kl, lambda).unwrap();
        let total = tape.add(infonce, kls).unwrap();
        tape.backward(total).unwrap();

        let h = 1e-5;
        let param_vars = [
            ("layer0", vars.layers[0]),
            ("layer1", vars.layers[1]),
            ("mu_head", vars.mu_head),
            ("logvar_head", vars.logvar_head),
        ];
        for (name, var) in param_vars {
            let ad = tape.grad(var).unwrap().clone();
            let base = tape.value(var).clone();
            for k in 0..base.as_slice().len() {
                let mut enc_p = encoder.clone();
                let mut enc_m = encoder.clone();
                let target_p: &mut Matrix = match name {
                    "layer0" => &mut enc_p.layers[0],
                    "layer1" => &mut enc_p.layers[1],
                    "mu_head" => &mut enc_p.mu_head,
                    _ => &mut enc_p.logvar_head,
                };
                target_p.as_mut_slice()[k] += h;
                let target_m: &mut Matrix = match name {
                    "layer0" => &mut enc_m.layers[0],
                    "layer1" => &mut enc_m.layers[1],
                    "mu_head" => &mut enc_m.mu_head,
                    _ => &mut enc_m.logvar_head,
                };
                target_m.as_mut_slice()[k] -= h;
                let fd = (eval(&enc_p) - eval(&enc_m)) / (2.0 * h);
                let got = ad.as_slice()[k];
                let denom = got.abs().max(fd.abs()).max(1.0);
                assert!(
                    (got - fd).abs() / denom < 1e-4,
                    "{name}[{k}]: ad={got} fd={fd}"
                );
            }
        }
    }

    #[test]
    fn infonce_bound_below_exact_mi_on_two_point_toy() {
        // two-point joint distribution over (anchor state, positive state),
        // embeddings za, zb; negatives drawn from the marginal. The InfoNCE
        // value is computed in expectation by enumeration and must sit at or
        // below the exact mutual information.
        let za = [1.0, 0.0];
        let zb = [0.0, 1.0];
        let states = [za, zb];
        // joint p(a, b): correlated pair
        let joint: [[f64; 2]; 2] = [[0.4, 0.1], [0.1, 0.4]];
        let marginal = [0.5, 0.5];
        let mut exact_mi = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let p = joint[i][j];
                exact_mi += p * (p / (marginal[i] * marginal[j])).ln();
            }
        }
        let tau = 1.0;
        let sim = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]) / tau;
        // one negative drawn from the marginal, enumerated
        let mut expected_neg_log = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for (k, &pk) in marginal.iter().enumerate() {
                    let p = joint[i][j] * pk;
                    let num = sim(states[i], states[j]).exp();
                    let den = num + sim(states[i], states[k]).exp();
                    expected_neg_log += p * (num / den).ln();
                }
            }
        }
        let info_nce_bound = expected_neg_log; // = -L_InfoNCE
        assert!(
            info_nce_bound <= exact_mi + 1e-6,
            "bound {info_nce_bound} exceeds MI {exact_mi}"
        );
    }
}
