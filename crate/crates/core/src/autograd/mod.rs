//! Backward pass of the attention layer.
//!
//! With `S = SDDMM(Q, K)`, `P = softmax(S)` and `O = SpMM(P, V)`:
//!
//! ```text
//! dP = (dO * V^T) masked by A        SDDMM
//! dV = P^T * dO                      SpMM over CSC
//! dS = P . (dP - rowsum(P . dP))     softmax Jacobian
//! dQ = dS * K                        SpMM over CSR rows (destinations)
//! dK = dS^T * Q                      SpMM over CSC columns (sources)
//! ```
//!
//! The `dP -> dS -> dQ` chain has the same row-wise shape as the forward
//! pass and runs fused in one launch; see [`fused_backward`].

mod fused;
mod gradcheck;

pub use fused::{fused_backward, unfused_backward, BackwardOutput};
pub use gradcheck::{finite_difference_check, GradCheckReport, LossSpec, GRADCHECK_DENOM_FLOOR};

use crate::engine::ForwardContext;
use crate::error::{shape_err, Result};
use crate::graph::GraphTopology;
use crate::kernels::{l2_normalize_rows, leaky_relu_grad, SddmmKind, SddmmVariant};
use crate::scalar::Scalar;
use crate::tensor::{dot, DenseMatrix, EdgeScalars};

/// Gradients of one attention layer. For add-SDDMM, `dq` and `dk` are the
/// `N x 1` gradients of the destination term `er` and the source term `el`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub dq: DenseMatrix<T>,
    pub dk: DenseMatrix<T>,
    pub dv: DenseMatrix<T>,
    pub ds: EdgeScalars<T>,
    pub dp: EdgeScalars<T>,
    pub variant: SddmmVariant,
}

impl<T: Scalar> GradBundle<T> {
    pub fn del(&self) -> Option<&DenseMatrix<T>> {
        (self.variant == SddmmVariant::Add).then_some(&self.dk)
    }

    pub fn der(&self) -> Option<&DenseMatrix<T>> {
        (self.variant == SddmmVariant::Add).then_some(&self.dq)
    }

    pub fn is_finite(&self) -> bool {
        self.dq.is_finite()
            && self.dk.is_finite()
            && self.dv.is_finite()
            && self.ds.first_non_finite().is_none()
            && self.dp.first_non_finite().is_none()
    }
}

pub(crate) fn check_grad_out<T: Scalar>(
    g: &GraphTopology,
    ctx: &ForwardContext<T>,
    d_out: &DenseMatrix<T>,
) -> Result<()> {
    d_out.expect_shape("backward (dO)", g.num_nodes(), ctx.v.cols())?;
    ctx.probs.expect_len("backward (P)", g.num_edges())?;
    if ctx.v.rows() != g.num_nodes() {
        return Err(shape_err("backward (V rows)", g.num_nodes(), ctx.v.rows()));
    }
    Ok(())
}

/// `dP[e] = <dO[dst], V[src]>`, `dV[u] = sum over out-edges of p[e] * dO[dst]`.
pub fn spmm_backward<T: Scalar>(
    g: &GraphTopology,
    ctx: &ForwardContext<T>,
    d_out: &DenseMatrix<T>,
) -> Result<(EdgeScalars<T>, DenseMatrix<T>)> {
    check_grad_out(g, ctx, d_out)?;
    let dp = EdgeScalars::from_vec(g.edges().map(|(u, v)| dot(d_out.row(v), ctx.v.row(u))).collect());
    let dv = aggregate_by_source(
        g,
        ctx.v.cols(),
        |e| ctx.probs.values()[e],
        |e| d_out.row(g.coo_dst()[e]),
    );
    Ok((dp, dv))
}

/// Softmax Jacobian applied per destination row:
/// `dS[e] = P[e] * (dP[e] - sum_row P * dP)`.
pub fn softmax_backward<T: Scalar>(
    g: &GraphTopology,
    p: &EdgeScalars<T>,
    dp: &EdgeScalars<T>,
) -> Result<EdgeScalars<T>> {
    p.expect_len("softmax_backward (P)", g.num_edges())?;
    dp.expect_len("softmax_backward (dP)", g.num_edges())?;
    let mut ds = EdgeScalars::zeros(g.num_edges());
    for v in 0..g.num_nodes() {
        let r = g.row_edges(v);
        softmax_backward_row(&p.values()[r.clone()], &dp.values()[r.clone()], &mut ds.values_mut()[r]);
    }
    Ok(ds)
}

#[inline]
pub(crate) fn softmax_backward_row<T: Scalar>(p: &[T], dp: &[T], ds: &mut [T]) {
    let mut inner = T::zero();
    for (&a, &b) in p.iter().zip(dp) {
        inner += a * b;
    }
    for ((o, &a), &b) in ds.iter_mut().zip(p).zip(dp) {
        *o = a * (b - inner);
    }
}

/// Per-edge weight `d score / d (operand product)`: `scale` for dot, the
/// LeakyReLU derivative for add.
#[inline]
pub(crate) fn edge_coeff<T: Scalar>(kind: &SddmmKind, q: &DenseMatrix<T>, k: &DenseMatrix<T>, u: usize, v: usize) -> T {
    match kind.variant {
        SddmmVariant::Dot => T::of(kind.scale),
        SddmmVariant::Add => leaky_relu_grad(k.get(u, 0) + q.get(v, 0), T::of(kind.leaky_slope)),
    }
}

/// Gradient of the destination operand, accumulated along CSR rows.
pub(crate) fn grad_dst_operand<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    ds: &[T],
    kind: &SddmmKind,
) -> DenseMatrix<T> {
    let mut dq = DenseMatrix::zeros(g.num_nodes(), q.cols());
    for v in 0..g.num_nodes() {
        let row = dq.row_mut(v);
        for e in g.row_edges(v) {
            let u = g.csr_col_idx()[e];
            accumulate_operand(row, kind, edge_coeff(kind, q, k, u, v) * ds[e], k.row(u));
        }
    }
    dq
}

/// Gradient of the source operand, accumulated along CSC columns.
pub(crate) fn grad_src_operand<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    ds: &[T],
    kind: &SddmmKind,
) -> DenseMatrix<T> {
    let mut dk = DenseMatrix::zeros(g.num_nodes(), k.cols());
    for u in 0..g.num_nodes() {
        let row = dk.row_mut(u);
        for pos in g.col_positions(u) {
            let e = g.csc_edge_perm()[pos];
            let v = g.csc_row_idx()[pos];
            accumulate_operand(row, kind, edge_coeff(kind, q, k, u, v) * ds[e], q.row(v));
        }
    }
    dk
}

#[inline]
fn accumulate_operand<T: Scalar>(row: &mut [T], kind: &SddmmKind, w: T, other: &[T]) {
    match kind.variant {
        SddmmVariant::Dot => {
            for (o, &x) in row.iter_mut().zip(other) {
                *o += w * x;
            }
        }
        SddmmVariant::Add => row[0] += w,
    }
}

/// `out[u] = sum over out-edges e of u of weight(e) * rhs(e)`, walking the
/// CSC view so each source row has one writer.
pub(crate) fn aggregate_by_source<'a, T: Scalar>(
    g: &GraphTopology,
    d: usize,
    weight: impl Fn(usize) -> T,
    rhs: impl Fn(usize) -> &'a [T],
) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(g.num_nodes(), d);
    for u in 0..g.num_nodes() {
        let row = out.row_mut(u);
        for pos in g.col_positions(u) {
            let e = g.csc_edge_perm()[pos];
            let w = weight(e);
            for (o, &x) in row.iter_mut().zip(rhs(e)) {
                *o += w * x;
            }
        }
    }
    out
}

/// Backward of `y = x / max(||x||, eps)` row by row.
pub fn l2_normalize_backward<T: Scalar>(x: &DenseMatrix<T>, dy: &DenseMatrix<T>, eps: T) -> DenseMatrix<T> {
    let y = l2_normalize_rows(x, eps);
    let mut dx = DenseMatrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let norm = dot(x.row(r), x.row(r)).sqrt();
        let out = dx.row_mut(r);
        if norm > eps {
            let proj = dot(y.row(r), dy.row(r));
            for ((o, &yy), &g) in out.iter_mut().zip(y.row(r)).zip(dy.row(r)) {
                *o = (g - yy * proj) / norm;
            }
        } else {
            for (o, &g) in out.iter_mut().zip(dy.row(r)) {
                *o = g / eps;
            }
        }
    }
    dx
}

/// Gradients of the raw SDDMM operands from `dS`. For AGNN the
/// normalization Jacobian is applied after accumulation.
pub fn sddmm_backward<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    ds: &EdgeScalars<T>,
    kind: &SddmmKind,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    kind.validate()?;
    ds.expect_len("sddmm_backward (dS)", g.num_edges())?;
    let n = g.num_nodes();
    let width = if kind.variant == SddmmVariant::Add { 1 } else { q.cols() };
    q.expect_shape("sddmm_backward (Q)", n, width)?;
    k.expect_shape("sddmm_backward (K)", n, width)?;
    if kind.l2_normalize_inputs {
        let eps = T::of(kind.eps);
        let (qu, ku) = (l2_normalize_rows(q, eps), l2_normalize_rows(k, eps));
        let dqu = grad_dst_operand(g, &qu, &ku, ds.values(), kind);
        let dku = grad_src_operand(g, &qu, &ku, ds.values(), kind);
        Ok((l2_normalize_backward(q, &dqu, eps), l2_normalize_backward(k, &dku, eps)))
    } else {
        Ok((
            grad_dst_operand(g, q, k, ds.values(), kind),
            grad_src_operand(g, q, k, ds.values(), kind),
        ))
    }
}
