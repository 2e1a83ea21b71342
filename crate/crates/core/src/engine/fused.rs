use super::{
    assemble, run_blocks, sddmm_edge_parallel, softmax_spmm_block, Buffer, ExecCounters, Operands, RowBlockOut,
    INDEX_BYTES,
};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::schedule::{check_smmf_feasible, partition_blocks, warp_balance};
use crate::tensor::{DenseMatrix, EdgeScalars};

type Out<T> = (DenseMatrix<T>, EdgeScalars<T>, ExecCounters);

pub(super) fn smmf<T: Scalar>(ops: &Operands<'_, T>) -> Result<Out<T>> {
    let (g, plan) = (ops.g, ops.plan);
    check_smmf_feasible(g, plan, ops.v_width())?;
    let blocks = partition_blocks(g, plan.rows_per_block);

    let results = run_blocks(blocks.len(), plan.deterministic, |b| {
        let rows = blocks[b].clone();
        let edges = g.rows_edge_range(rows.clone());
        let e0 = edges.start;
        let m = edges.len() as u64;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1 + m) * INDEX_BYTES);

        // warp-balanced SDDMM into the shared score buffer
        let mut scores = vec![T::zero(); edges.len()];
        let assignment = warp_balance(g, b, rows.clone(), plan.groups_per_block);
        for (_, chunk) in &assignment.per_group_edges {
            c.per_group_edge_loads.push(chunk.len());
            for e in chunk.clone() {
                scores[e - e0] = ops.score(e);
            }
        }
        ops.charge_score_reads(&mut c, edges.len(), plan.vector_width);
        c.shared(m * ops.elem());

        let (out, probs) = softmax_spmm_block(ops, rows.clone(), &scores, &mut c);
        RowBlockOut {
            rows,
            out,
            edges,
            probs,
            counters: c,
        }
    });

    let mut counters = ExecCounters {
        kernel_launches: 1,
        ..Default::default()
    };
    let (out, probs) = assemble(g, ops.v_width(), results, &mut counters);
    Ok((out, probs, counters))
}

pub(super) fn pmf<T: Scalar>(ops: &Operands<'_, T>) -> Result<Out<T>> {
    let (g, plan) = (ops.g, ops.plan);
    let mut counters = ExecCounters::default();
    let scores = sddmm_edge_parallel(ops, &mut counters);

    let blocks = partition_blocks(g, plan.rows_per_block);
    let results = run_blocks(blocks.len(), plan.deterministic, |b| {
        let rows = blocks[b].clone();
        let edges = g.rows_edge_range(rows.clone());
        let m = edges.len() as u64;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1 + m) * INDEX_BYTES);
        c.read(Buffer::Scores, m * ops.elem());
        let (out, probs) = softmax_spmm_block(ops, rows.clone(), &scores[edges.clone()], &mut c);
        RowBlockOut {
            rows,
            out,
            edges,
            probs,
            counters: c,
        }
    });
    counters.kernel_launches += 1;
    let (out, probs) = assemble(g, ops.v_width(), results, &mut counters);
    Ok((out, probs, counters))
}
