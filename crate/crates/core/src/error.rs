use thiserror::Error;

/// Errors raised by the analysis toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("element budget exceeded: {requested} elements requested, budget is {budget}")]
    Budget { requested: usize, budget: usize },

    #[error("layer index {index} out of range {lo}..={hi}")]
    LayerIndex { index: usize, lo: usize, hi: usize },

    #[error("data assumptions violated: {0}")]
    Assumption(String),

    #[error("X X^T is singular; the data spectrum is undefined")]
    SingularGram,

    #[error("upstream product of layer {layer} has full column rank; no loss-preserving perturbation exists")]
    NoNullSpace { layer: usize },

    #[error("index set of size {len} exceeds the rank budget {budget}")]
    IndexSetTooLarge { len: usize, budget: usize },

    #[error("index {index} is not a valid eigenvector index in 1..={dy} (indices must be strictly ascending)")]
    InvalidIndex { index: usize, dy: usize },

    #[error("target rank {rank} exceeds the smallest hidden width {p}")]
    RankExceedsWidth { rank: usize, p: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
