//! Unfused reference kernels. These define correctness for the fused
//! engines; the dense oracle checks them in turn.

pub mod kind;
pub mod oracle;
pub mod sddmm;
pub mod softmax;
pub mod spmm;

pub use kind::{leaky_relu, leaky_relu_grad, SddmmKind, SddmmVariant, DEFAULT_L2_EPS, DEFAULT_LEAKY_SLOPE};
pub use oracle::{dense_oracle_forward, DenseOracle, ORACLE_MAX_NODES};
pub use sddmm::{l2_normalize_rows, sddmm, sddmm_add, sddmm_dot};
pub use softmax::edge_softmax;
pub use spmm::spmm;

use crate::error::Result;
use crate::graph::GraphTopology;
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

/// `spmm(edge_softmax(sddmm(..)), v)` with the reference kernels.
pub fn reference_forward<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
) -> Result<DenseMatrix<T>> {
    sddmm::check_operands(g, q, k, v, kind)?;
    let s = sddmm(g, q, k, kind)?;
    let p = edge_softmax(g, &s)?;
    spmm(g, &p, v)
}
