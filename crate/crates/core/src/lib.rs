//! Fused sparse attention kernels for graph neural networks.
//!
//! The attention layer `O = SpMM(Softmax(SDDMM(Q, K, A)), V)` is provided
//! as unfused reference kernels ([`kernels`]), as fused executions under
//! several scheduling strategies ([`engine`]) with a memory-traffic model,
//! and with a matching backward pass ([`autograd`]). Everything numeric is
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! element type for callers that do not need the generality.

pub mod autograd;
pub mod bench;
pub mod engine;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod models;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use engine::{execute, ExecCounters, ForwardContext, ForwardOutput};
pub use error::{Error, Result};
pub use graph::{batch_graphs, gen_random, gen_super_node, DegreeStats, GraphTopology};
pub use kernels::{SddmmKind, SddmmVariant};
pub use scalar::{DType, Scalar};
pub use schedule::{select_strategy, FusionPlan, Strategy};
pub use tensor::{DenseMatrix, EdgeScalars};

pub type DenseMatrixF32 = DenseMatrix<f32>;
pub type DenseMatrixF64 = DenseMatrix<f64>;
pub type EdgeScalarsF32 = EdgeScalars<f32>;
pub type EdgeScalarsF64 = EdgeScalars<f64>;
pub type ForwardOutputF32 = ForwardOutput<f32>;
pub type ForwardOutputF64 = ForwardOutput<f64>;
pub type GradBundleF32 = autograd::GradBundle<f32>;
pub type GradBundleF64 = autograd::GradBundle<f64>;
