//! Dense-tensor autodiff, the variational GCN encoder, and optimizers.

pub mod encoder;
pub mod optim;
pub mod params;
pub mod tape;

pub use encoder::{
    encode_variational, gcn_forward, reparameterize, reparameterize_with, standard_normal,
    EncoderVars, VariationalEncoder, LOGVAR_CLAMP,
};
pub use optim::{OptimConfig, OptimKind, Optimizer};
pub use tape::{Tape, Var};
