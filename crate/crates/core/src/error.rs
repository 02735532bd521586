use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} has {found} samples but k_nn = {k_nn} requires at least {required}")]
    InsufficientClassSamples {
        class: usize,
        found: usize,
        k_nn: usize,
        required: usize,
    },

    #[error("automatic kernel width is zero: all neighbor distances vanish (duplicate-only data)")]
    DegenerateKernelWidth,

    #[error("node {0} is isolated (degree 0); the symmetric-normalized Laplacian is undefined")]
    IsolatedNode(usize),

    #[error("Laplacian diagonal entry {index} is {value}, must be positive")]
    DegenerateDiagonal { index: usize, value: f64 },

    #[error(
        "Laplacian diagonal is not constant (L[{index}][{index}] = {value} vs {reference}); \
         use the symmetric-normalized Laplacian"
    )]
    NonUniformDiagonal {
        index: usize,
        value: f64,
        reference: f64,
    },

    #[error("input is not a valid similarity matrix: {0}")]
    InvalidSimilarity(String),

    #[error("{0}")]
    Singular(String),

    #[error("non-finite objective at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("truncated model file: {0}")]
    Truncated(String),

    #[error("not a model file (bad magic)")]
    BadMagic,

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
