use super::{assemble, run_blocks, Buffer, ExecCounters, Operands, RowBlockOut, Stage, INDEX_BYTES};
use crate::error::Result;
use crate::kernels::softmax::row_max;
use crate::scalar::Scalar;
use crate::schedule::partition_blocks;
use crate::tensor::{DenseMatrix, EdgeScalars};

/// Node-parallel blocks with feature-parallel lanes for every stage. Lanes
/// map to feature elements, so dense accesses are scalar (one transaction
/// per element) regardless of the plan's vector width.
pub(super) fn feature_parallel<T: Scalar>(
    ops: &Operands<'_, T>,
) -> Result<(DenseMatrix<T>, EdgeScalars<T>, ExecCounters)> {
    let (g, plan) = (ops.g, ops.plan);
    let (d, dq, b) = (ops.v_width(), ops.qk_width() as u64, ops.elem());
    let groups_per_row = d.div_ceil(plan.group_width).max(1) as u64;
    let blocks = partition_blocks(g, plan.rows_per_block);

    let results = run_blocks(blocks.len(), plan.deterministic, |blk| {
        let rows = blocks[blk].clone();
        let edges = g.rows_edge_range(rows.clone());
        let e0 = edges.start;
        let m = edges.len() as u64;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1 + m) * INDEX_BYTES);
        let mut out = vec![T::zero(); rows.len() * d];
        let mut probs = vec![T::zero(); edges.len()];

        for (i, v) in rows.clone().enumerate() {
            let r = g.row_edges(v);
            let n = r.len() as u64;
            // every group of the row walks all of the row's edges
            c.per_group_edge_loads.push(r.len());
            let scores: Vec<T> = r.clone().map(|e| ops.score(e)).collect();
            c.read(Buffer::Features, 2 * n * dq * b);
            c.transact(Stage::Sddmm, 2 * n * dq);
            c.shared(n * b);

            let tile = &mut out[i * d..(i + 1) * d];
            if n > 0 {
                // each group repeats both row reductions
                let max = row_max(&scores);
                let mut sum = T::zero();
                for &s in &scores {
                    sum += (s - max).exp();
                }
                c.softmax_scalar_ops += groups_per_row * 3 * n;
                c.shared(groups_per_row * n * b);

                for (j, e) in r.clone().enumerate() {
                    probs[e - e0] = (scores[j] - max).exp() / sum;
                }
                c.write(Buffer::Probs, n * b);

                // aggregation recomputes each weight from S
                for (j, e) in r.enumerate() {
                    let p = (scores[j] - max).exp() / sum;
                    for (o, &x) in tile.iter_mut().zip(ops.v.row(g.csr_col_idx()[e])) {
                        *o += p * x;
                    }
                }
                c.recomputed_exp_ops += groups_per_row * n;
                c.shared(groups_per_row * n * b);
                c.read(Buffer::Features, n * d as u64 * b);
                c.transact(Stage::Spmm, n * d as u64);
            }
            c.write(Buffer::Output, d as u64 * b);
            c.transact(Stage::Spmm, d as u64);
        }
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
    let (out, probs) = assemble(g, d, results, &mut counters);
    Ok((out, probs, counters))
}
