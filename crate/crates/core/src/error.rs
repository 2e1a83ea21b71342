use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node id {node} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("duplicate edge ({src} -> {dst})")]
    DuplicateEdge { src: usize, dst: usize },

    #[error("src and dst arrays differ in length ({src} vs {dst})")]
    EdgeListLength { src: usize, dst: usize },

    #[error("{op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("data type width must be non-zero")]
    ZeroDtypeBytes,

    #[error("infeasible generator parameters: {0}")]
    InfeasibleGenerator(String),

    #[error("dense oracle refuses N = {n} (limit {limit})")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("shared memory budget exceeded in block {block}: needs {required} bytes, budget is {budget}")]
    SharedMemoryExceeded {
        block: usize,
        required: usize,
        budget: usize,
    },

    #[error("loss evaluated to a non-finite value ({0})")]
    NonFiniteLoss(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "mode `{mode}` disagrees with `{reference}`: relative error {rel:.3e} > {tol:.1e} \
         (max |diff| {max_abs:.3e} at row {row}, col {col})"
    )]
    ModeDisagreement {
        mode: String,
        reference: String,
        rel: f64,
        tol: f64,
        max_abs: f64,
        row: usize,
        col: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
