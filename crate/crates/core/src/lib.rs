//! Robust multi-domain graph foundation model pipeline.
//!
//! The crate covers the full loop at desk scale:
//!
//! 1. **graph** — datasets (file ingestion and synthetic SBM domains),
//!    adjacency normalization, ego-graphs, and the feature/structure
//!    perturbations used by the robustness harness.
//! 2. **entropy** — two-level encoding trees found by greedy structural
//!    entropy minimization; drives prompts, pair sampling and structure
//!    refinement.
//! 3. **augment** — cluster-context textual prompts, pluggable text
//!    encoders, truncated SVD alignment and feature fusion.
//! 4. **nn** — reverse-mode autodiff over dense f64 matrices, the
//!    variational GCN encoder and optimizers.
//! 5. **pretrain** — per-domain self-supervised information-bottleneck
//!    training (InfoNCE + KL) producing frozen expert checkpoints.
//! 6. **routing** — prototype-similarity gating over the expert ensemble
//!    plus a learnable null expert on the probability simplex.
//! 7. **structure** — differentiable intra-cluster attention refinement and
//!    influence-based inter-cluster pruning of the target adjacency.
//! 8. **finetune** — few-shot tasks, prompted embeddings, prototype
//!    contrastive classification, the fine-tuning loop and evaluation.
//! 9. **harness** — experiment configs, robustness sweeps, ablations and
//!    report emission behind the CLI.

pub mod augment;
pub mod entropy;
pub mod error;
pub mod finetune;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod matio;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod routing;
pub mod structure;

pub use error::{Error, Result};
pub use linalg::Matrix;
