use std::time::Instant;

use super::{
    aggregate_by_source, check_grad_out, edge_coeff, grad_dst_operand, grad_src_operand, l2_normalize_backward,
    softmax_backward_row, GradBundle,
};
use crate::engine::{run_blocks, vectorized_transactions, Buffer, ExecCounters, ForwardContext, Stage, INDEX_BYTES};
use crate::error::Result;
use crate::graph::GraphTopology;
use crate::kernels::SddmmVariant;
use crate::scalar::Scalar;
use crate::schedule::{partition_blocks, smmf_infeasible_block, warp_balance, FusionPlan, Strategy};
use crate::tensor::{dot, DenseMatrix, EdgeScalars};

#[derive(Debug, Clone)]
pub struct BackwardOutput<T> {
    pub grads: GradBundle<T>,
    pub counters: ExecCounters,
}

struct Geometry {
    n: u64,
    e: u64,
    b: u64,
    dq: usize,
    dv: usize,
    w: usize,
    add: bool,
}

impl Geometry {
    fn new<T: Scalar>(g: &GraphTopology, ctx: &ForwardContext<T>, plan: &FusionPlan) -> Self {
        Geometry {
            n: g.num_nodes() as u64,
            e: g.num_edges() as u64,
            b: plan.dtype_bytes as u64,
            dq: ctx.q.cols(),
            dv: ctx.v.cols(),
            w: plan.vector_width,
            add: ctx.kind.variant == SddmmVariant::Add,
        }
    }

    /// Dense reads behind the per-edge score derivative: the two operand
    /// scalars for LeakyReLU, nothing for a constant scale.
    fn coeff_reads(&self, edges: u64) -> u64 {
        if self.add {
            2 * edges * self.b
        } else {
            0
        }
    }
}

/// Unfused backward: five launches (dP SDDMM, dV SpMM, softmax backward,
/// dQ SpMM, dK SpMM) with dP and dS round-tripping through global memory.
pub fn unfused_backward<T: Scalar>(
    g: &GraphTopology,
    ctx: &ForwardContext<T>,
    d_out: &DenseMatrix<T>,
) -> Result<BackwardOutput<T>> {
    check_grad_out(g, ctx, d_out)?;
    let start = Instant::now();
    let plan = ctx.plan;
    let geo = Geometry::new(g, ctx, &plan);
    let (q, k) = ctx.effective_qk();
    let mut c = ExecCounters::default();

    let (dp, dv) = super::spmm_backward(g, ctx, d_out)?;
    charge_dp_sddmm(&mut c, &geo, geo.e);
    c.write(Buffer::GradProbs, geo.e * geo.b);
    c.kernel_launches += 1;
    charge_dv(&mut c, &geo);

    let ds = super::softmax_backward(g, &ctx.probs, &dp)?;
    c.read(Buffer::Topology, (geo.n + 1) * INDEX_BYTES);
    c.read(Buffer::Probs, geo.e * geo.b);
    c.read(Buffer::GradProbs, geo.e * geo.b);
    c.write(Buffer::GradScores, geo.e * geo.b);
    c.softmax_scalar_ops += 3 * geo.e;
    c.kernel_launches += 1;

    let dq = grad_dst_operand(g, q, k, ds.values(), &ctx.kind);
    c.read(Buffer::Topology, (geo.n + 1 + geo.e) * INDEX_BYTES);
    c.read(Buffer::GradScores, geo.e * geo.b);
    charge_operand_spmm(&mut c, &geo, geo.e, geo.n);
    c.kernel_launches += 1;

    let dk = grad_src_operand(g, q, k, ds.values(), &ctx.kind);
    charge_dk(&mut c, &geo);

    let grads = finish(ctx, dq, dk, dv, ds, dp);
    c.elapsed_ns = start.elapsed().as_nanos() as u64;
    Ok(BackwardOutput { grads, counters: c })
}

/// Fused backward: one row-block launch computes dP, the softmax backward
/// and dQ with dP held in shared memory and dS written once; then dV and dK
/// run as column-parallel launches over the CSC view. Falls back to
/// [`unfused_backward`] (flagging `fallback_unfused`) when a block does not
/// fit the shared-memory budget; a plan naming `Unfused` takes that path
/// directly.
pub fn fused_backward<T: Scalar>(
    g: &GraphTopology,
    ctx: &ForwardContext<T>,
    d_out: &DenseMatrix<T>,
    plan: &FusionPlan,
) -> Result<BackwardOutput<T>> {
    plan.validate()?;
    check_grad_out(g, ctx, d_out)?;
    if plan.strategy == Strategy::Unfused {
        return unfused_backward(g, ctx, d_out);
    }
    if smmf_infeasible_block(g, plan, ctx.q.cols()).is_some() {
        let mut out = unfused_backward(g, ctx, d_out)?;
        out.counters.fallback_unfused = true;
        return Ok(out);
    }

    let start = Instant::now();
    let geo = Geometry::new(g, ctx, plan);
    let (q, k) = ctx.effective_qk();
    let kind = ctx.kind;
    let (dqc, dvc) = (geo.dq, geo.dv);
    let blocks = partition_blocks(g, plan.rows_per_block);

    let parts = run_blocks(blocks.len(), plan.deterministic, |bi| {
        let rows = blocks[bi].clone();
        let edges = g.rows_edge_range(rows.clone());
        let e0 = edges.start;
        let m = edges.len() as u64;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1 + m) * INDEX_BYTES);

        // warp-balanced dP SDDMM into shared memory
        let mut dp = vec![T::zero(); edges.len()];
        for (_, chunk) in &warp_balance(g, bi, rows.clone(), plan.groups_per_block).per_group_edges {
            c.per_group_edge_loads.push(chunk.len());
            for e in chunk.clone() {
                dp[e - e0] = dot(d_out.row(g.coo_dst()[e]), ctx.v.row(g.coo_src()[e]));
            }
        }
        charge_dp_sddmm(&mut c, &geo, m);
        c.shared(m * geo.b);

        let mut ds = vec![T::zero(); edges.len()];
        let mut dq = vec![T::zero(); rows.len() * dqc];
        for (i, v) in rows.clone().enumerate() {
            let r = g.row_edges(v);
            let local = r.start - e0..r.end - e0;
            softmax_backward_row(&ctx.probs.values()[r.clone()], &dp[local.clone()], &mut ds[local]);
            let tile = &mut dq[i * dqc..(i + 1) * dqc];
            for e in r {
                let u = g.csr_col_idx()[e];
                let w = edge_coeff(&kind, q, k, u, v) * ds[e - e0];
                match kind.variant {
                    SddmmVariant::Dot => {
                        for (o, &x) in tile.iter_mut().zip(k.row(u)) {
                            *o += w * x;
                        }
                    }
                    SddmmVariant::Add => tile[0] += w,
                }
            }
        }
        c.read(Buffer::Probs, m * geo.b);
        c.softmax_scalar_ops += 3 * m;
        c.shared(3 * m * geo.b);
        c.write(Buffer::GradScores, m * geo.b);
        charge_operand_spmm(&mut c, &geo, m, rows.len() as u64);
        (rows, edges, dp, ds, dq, c)
    });

    let mut c = ExecCounters {
        kernel_launches: 1,
        ..Default::default()
    };
    let mut dp = EdgeScalars::zeros(g.num_edges());
    let mut ds = EdgeScalars::zeros(g.num_edges());
    let mut dq = DenseMatrix::zeros(g.num_nodes(), dqc);
    for (rows, edges, bdp, bds, bdq, bc) in parts {
        dp.values_mut()[edges.clone()].copy_from_slice(&bdp);
        ds.values_mut()[edges].copy_from_slice(&bds);
        dq.data_mut()[rows.start * dqc..rows.end * dqc].copy_from_slice(&bdq);
        c.merge(&bc);
    }

    let dv = aggregate_by_source(g, dvc, |e| ctx.probs.values()[e], |e| d_out.row(g.coo_dst()[e]));
    charge_dv(&mut c, &geo);
    let dk = grad_src_operand(g, q, k, ds.values(), &kind);
    charge_dk(&mut c, &geo);

    let grads = finish(ctx, dq, dk, dv, ds, dp);
    c.elapsed_ns = start.elapsed().as_nanos() as u64;
    Ok(BackwardOutput { grads, counters: c })
}

fn finish<T: Scalar>(
    ctx: &ForwardContext<T>,
    dq: DenseMatrix<T>,
    dk: DenseMatrix<T>,
    dv: DenseMatrix<T>,
    ds: EdgeScalars<T>,
    dp: EdgeScalars<T>,
) -> GradBundle<T> {
    let (dq, dk) = if ctx.unit_qk.is_some() {
        let eps = T::of(ctx.kind.eps);
        (
            l2_normalize_backward(&ctx.q, &dq, eps),
            l2_normalize_backward(&ctx.k, &dk, eps),
        )
    } else {
        (dq, dk)
    };
    GradBundle {
        dq,
        dk,
        dv,
        ds,
        dp,
        variant: ctx.kind.variant,
    }
}

fn charge_dp_sddmm(c: &mut ExecCounters, geo: &Geometry, edges: u64) {
    c.read(Buffer::Topology, 2 * edges * INDEX_BYTES);
    c.read(Buffer::Features, 2 * edges * geo.dv as u64 * geo.b);
    c.transact(Stage::Sddmm, 2 * edges * vectorized_transactions(geo.dv, geo.w));
}

/// Aggregation of one operand gradient over `edges` edges into `rows` rows.
fn charge_operand_spmm(c: &mut ExecCounters, geo: &Geometry, edges: u64, rows: u64) {
    let t = vectorized_transactions(geo.dq, geo.w);
    c.read(Buffer::Features, edges * geo.dq as u64 * geo.b + geo.coeff_reads(edges));
    c.write(Buffer::Output, rows * geo.dq as u64 * geo.b);
    c.transact(Stage::Spmm, edges * t + rows * t);
}

fn charge_dv(c: &mut ExecCounters, geo: &Geometry) {
    let t = vectorized_transactions(geo.dv, geo.w);
    c.read(Buffer::Topology, (geo.n + 1 + 2 * geo.e) * INDEX_BYTES);
    c.read(Buffer::Probs, geo.e * geo.b);
    c.read(Buffer::Features, geo.e * geo.dv as u64 * geo.b);
    c.write(Buffer::Output, geo.n * geo.dv as u64 * geo.b);
    c.transact(Stage::Spmm, geo.e * t + geo.n * t);
    c.kernel_launches += 1;
}

fn charge_dk(c: &mut ExecCounters, geo: &Geometry) {
    c.read(Buffer::Topology, (geo.n + 1 + 2 * geo.e) * INDEX_BYTES);
    c.read(Buffer::GradScores, geo.e * geo.b);
    charge_operand_spmm(c, geo, geo.e, geo.n);
    c.kernel_launches += 1;
}
