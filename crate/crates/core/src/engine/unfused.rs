use super::{
    run_blocks, sddmm_edge_parallel, vectorized_transactions, Buffer, ExecCounters, Operands, Stage, INDEX_BYTES,
};
use crate::error::Result;
use crate::kernels::softmax::{exp_shifted, row_max};
use crate::scalar::Scalar;
use crate::schedule::partition_blocks;
use crate::tensor::{DenseMatrix, EdgeScalars};

/// SDDMM writes S; softmax reads S and writes F plus per-row sums; SpMM
/// reads F and the sums, writes P for the backward pass and aggregates.
pub(super) fn unfused<T: Scalar>(ops: &Operands<'_, T>) -> Result<(DenseMatrix<T>, EdgeScalars<T>, ExecCounters)> {
    let (g, plan) = (ops.g, ops.plan);
    let (d, b, w) = (ops.v_width(), ops.elem(), plan.vector_width);
    let tv = vectorized_transactions(d, w);
    let mut counters = ExecCounters::default();

    let scores = sddmm_edge_parallel(ops, &mut counters);

    let blocks = partition_blocks(g, plan.rows_per_block);

    // softmax kernel
    let parts = run_blocks(blocks.len(), plan.deterministic, |blk| {
        let rows = blocks[blk].clone();
        let edges = g.rows_edge_range(rows.clone());
        let e0 = edges.start;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1) * INDEX_BYTES);
        let mut f = vec![T::zero(); edges.len()];
        let mut sums = Vec::with_capacity(rows.len());
        for v in rows.clone() {
            let r = g.row_edges(v);
            let n = r.len() as u64;
            let local = r.start - e0..r.end - e0;
            let sum = if n > 0 {
                let s = &scores[r];
                let max = row_max(s);
                exp_shifted(s, max, &mut f[local])
            } else {
                T::zero()
            };
            sums.push(sum);
            c.softmax_scalar_ops += 3 * n;
            c.read(Buffer::Scores, n * b);
            c.write(Buffer::Exps, n * b);
        }
        c.write(Buffer::RowStats, rows.len() as u64 * b);
        (f, sums, c)
    });
    counters.kernel_launches += 1;
    let mut exps = Vec::with_capacity(g.num_edges());
    let mut row_sums = Vec::with_capacity(g.num_nodes());
    for (f, sums, c) in parts {
        exps.extend(f);
        row_sums.extend(sums);
        counters.merge(&c);
    }

    // SpMM kernel
    let parts = run_blocks(blocks.len(), plan.deterministic, |blk| {
        let rows = blocks[blk].clone();
        let edges = g.rows_edge_range(rows.clone());
        let m = edges.len() as u64;
        let mut c = ExecCounters::default();
        c.read(Buffer::Topology, (rows.len() as u64 + 1 + m) * INDEX_BYTES);
        c.read(Buffer::RowStats, rows.len() as u64 * b);
        let mut out = vec![T::zero(); rows.len() * d];
        let mut probs = Vec::with_capacity(edges.len());
        for (i, v) in rows.clone().enumerate() {
            let o = &mut out[i * d..(i + 1) * d];
            let r = g.row_edges(v);
            let n = r.len() as u64;
            for e in r {
                let p = exps[e] / row_sums[v];
                probs.push(p);
                for (oc, &x) in o.iter_mut().zip(ops.v.row(g.csr_col_idx()[e])) {
                    *oc += p * x;
                }
            }
            c.read(Buffer::Exps, n * b);
            c.write(Buffer::Probs, n * b);
            c.read(Buffer::Features, n * d as u64 * b);
            c.transact(Stage::Spmm, n * tv + tv);
            c.write(Buffer::Output, d as u64 * b);
        }
        (rows, out, edges, probs, c)
    });
    counters.kernel_launches += 1;
    let mut out = DenseMatrix::zeros(g.num_nodes(), d);
    let mut probs = EdgeScalars::zeros(g.num_edges());
    for (rows, o, edges, p, c) in parts {
        out.data_mut()[rows.start * d..rows.end * d].copy_from_slice(&o);
        probs.values_mut()[edges].copy_from_slice(&p);
        counters.merge(&c);
    }
    Ok((out, probs, counters))
}
