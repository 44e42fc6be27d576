use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidOp { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient; run backward first")]
    MissingGrad(String),

    #[error("laplacian is undefined for graphs with self-loops; use the adjacency or normalized adjacency operator instead")]
    SelfLoops,

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid montage: {0}")]
    Montage(String),

    #[error("k-NN graph needs k < n (k = {k}, n = {n})")]
    KTooLarge { k: usize, n: usize },

    #[error("cannot parse edge policy `{0}`; expected complete, knng:k=K or dist:d=D with optional ,self-loops")]
    EdgePolicy(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    #[error("payload `{path}` has {actual} bytes, expected {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("unsupported format version {0}")]
    UnknownVersion(u32),

    #[error("need at least 5 trials to split, got {0}")]
    TooFewTrials(usize),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("model predicts {model} classes but data has {data}")]
    ClassMismatch { model: usize, data: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidOp {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
