use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("entropy undefined: graph has no edges")]
    EdgelessGraph,

    #[error("attack infeasible: {0}")]
    AttackInfeasible(String),

    #[error("pair sampling infeasible: {0}")]
    PairSamplingInfeasible(String),

    #[error("remote encoder network failure: {0}")]
    RemoteNetwork(String),

    #[error("remote encoder returned {got} values, expected {expected}")]
    RemoteLength { expected: usize, got: usize },

    #[error("remote encoder returned malformed response: {0}")]
    RemoteFormat(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unknown checkpoint version {0}")]
    UnknownVersion(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("in domain {domain_id}: {source}")]
    Domain {
        domain_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Annotate an error with the source-domain it occurred in.
    pub fn in_domain(self, domain_id: &str) -> Error {
        Error::Domain {
            domain_id: domain_id.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
