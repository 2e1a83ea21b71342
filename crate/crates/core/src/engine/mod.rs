//! Execution of the attention pipeline under the four strategies.
//!
//! A "kernel launch" is one parallel-for over blocks followed by a join.
//! Inside a block the stages run one after another, which plays the role of
//! the intra-block barrier. Blocks only write their own output rows and
//! edge slots, and results are merged in block order, so parallel and
//! sequential runs produce identical outputs and counters.

mod baseline;
pub mod counters;
mod fused;
mod unfused;

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

pub use counters::{vectorized_transactions, Buffer, ExecCounters, ReadWrite, Stage, StageTally, INDEX_BYTES};

use crate::error::Result;
use crate::graph::GraphTopology;
use crate::kernels::sddmm::check_operands;
use crate::kernels::softmax::{exp_shifted, row_max};
use crate::kernels::{l2_normalize_rows, SddmmKind};
use crate::scalar::Scalar;
use crate::schedule::{balanced_split, edge_parallel_partition, FusionPlan, Strategy};
use crate::tensor::{DenseMatrix, EdgeScalars};

/// What a forward run keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardContext<T> {
    /// Softmax output, always materialized in global memory.
    pub probs: EdgeScalars<T>,
    /// Destination-side operand as passed in.
    pub q: DenseMatrix<T>,
    /// Source-side operand as passed in.
    pub k: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
    /// Row-normalized `q` and `k` when the kind normalizes its inputs.
    pub unit_qk: Option<(DenseMatrix<T>, DenseMatrix<T>)>,
    pub kind: SddmmKind,
    pub plan: FusionPlan,
}

impl<T: Scalar> ForwardContext<T> {
    /// The operands the SDDMM actually consumed.
    pub fn effective_qk(&self) -> (&DenseMatrix<T>, &DenseMatrix<T>) {
        match &self.unit_qk {
            Some((q, k)) => (q, k),
            None => (&self.q, &self.k),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub output: DenseMatrix<T>,
    pub ctx: ForwardContext<T>,
    pub counters: ExecCounters,
}

/// Borrowed inputs of one run, with AGNN normalization already applied.
pub(crate) struct Operands<'a, T> {
    pub g: &'a GraphTopology,
    pub q: &'a DenseMatrix<T>,
    pub k: &'a DenseMatrix<T>,
    pub v: &'a DenseMatrix<T>,
    pub kind: &'a SddmmKind,
    pub plan: &'a FusionPlan,
}

impl<T: Scalar> Operands<'_, T> {
    pub fn elem(&self) -> u64 {
        self.plan.dtype_bytes as u64
    }

    pub fn qk_width(&self) -> usize {
        self.q.cols()
    }

    pub fn v_width(&self) -> usize {
        self.v.cols()
    }

    #[inline]
    pub fn score(&self, e: usize) -> T {
        let g = self.g;
        self.kind.score(self.q.row(g.coo_dst()[e]), self.k.row(g.coo_src()[e]))
    }

    /// Global traffic and transactions of computing `edges` scores.
    pub fn charge_score_reads(&self, c: &mut ExecCounters, edges: usize, vector_width: usize) {
        let d = self.qk_width();
        c.read(Buffer::Features, 2 * (edges * d) as u64 * self.elem());
        c.transact(
            Stage::Sddmm,
            2 * edges as u64 * vectorized_transactions(d, vector_width),
        );
    }
}

pub(crate) fn run_blocks<R, F>(count: usize, deterministic: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if deterministic {
        (0..count).map(f).collect()
    } else {
        (0..count).into_par_iter().map(f).collect()
    }
}

/// Result of one node-parallel block.
pub(crate) struct RowBlockOut<T> {
    pub rows: Range<usize>,
    pub out: Vec<T>,
    pub edges: Range<usize>,
    pub probs: Vec<T>,
    pub counters: ExecCounters,
}

pub(crate) fn assemble<T: Scalar>(
    g: &GraphTopology,
    d: usize,
    blocks: Vec<RowBlockOut<T>>,
    counters: &mut ExecCounters,
) -> (DenseMatrix<T>, EdgeScalars<T>) {
    let mut out = DenseMatrix::zeros(g.num_nodes(), d);
    let mut probs = EdgeScalars::zeros(g.num_edges());
    for b in blocks {
        out.data_mut()[b.rows.start * d..b.rows.end * d].copy_from_slice(&b.out);
        probs.values_mut()[b.edges].copy_from_slice(&b.probs);
        counters.merge(&b.counters);
    }
    (out, probs)
}

/// Edge-parallel SDDMM launch: `num_blocks` near-equal edge ranges, each
/// split across the block's groups; scores go to global memory.
pub(crate) fn sddmm_edge_parallel<T: Scalar>(ops: &Operands<'_, T>, counters: &mut ExecCounters) -> Vec<T> {
    let plan = ops.plan;
    let ranges = edge_parallel_partition(ops.g, plan.edge_parallel_blocks(ops.g.num_edges()));
    let parts = run_blocks(ranges.len(), plan.deterministic, |b| {
        let range = ranges[b].clone();
        let mut c = ExecCounters::default();
        let mut s = Vec::with_capacity(range.len());
        for chunk in balanced_split(range.clone(), plan.groups_per_block) {
            c.per_group_edge_loads.push(chunk.len());
            s.extend(chunk.map(|e| ops.score(e)));
        }
        let m = range.len() as u64;
        c.read(Buffer::Topology, 2 * m * INDEX_BYTES);
        ops.charge_score_reads(&mut c, range.len(), plan.vector_width);
        c.write(Buffer::Scores, m * ops.elem());
        (s, c)
    });
    counters.kernel_launches += 1;
    let mut scores = Vec::with_capacity(ops.g.num_edges());
    for (s, c) in parts {
        scores.extend(s);
        counters.merge(&c);
    }
    scores
}

/// Softmax then vectorized SpMM for the rows of one block, with F kept in
/// shared memory. `scores` holds the block's edges in order; the caller
/// charges wherever they came from.
pub(crate) fn softmax_spmm_block<T: Scalar>(
    ops: &Operands<'_, T>,
    rows: Range<usize>,
    scores: &[T],
    c: &mut ExecCounters,
) -> (Vec<T>, Vec<T>) {
    let g = ops.g;
    let (d, b, w) = (ops.v_width(), ops.elem(), ops.plan.vector_width);
    let tv = vectorized_transactions(d, w);
    let e0 = g.csr_row_ptr()[rows.start];
    let mut out = vec![T::zero(); rows.len() * d];
    let mut exps = vec![T::zero(); scores.len()];
    let mut probs = vec![T::zero(); scores.len()];

    for (i, v) in rows.clone().enumerate() {
        let edges = g.row_edges(v);
        let local = edges.start - e0..edges.end - e0;
        let n = edges.len() as u64;
        let tile = &mut out[i * d..(i + 1) * d];

        if n > 0 {
            // redundancy-free softmax: one group per row, lanes over edges
            let s = &scores[local.clone()];
            let f = &mut exps[local.clone()];
            let max = row_max(s);
            let sum = exp_shifted(s, max, f);
            c.softmax_scalar_ops += 3 * n;
            c.shared(2 * n * b);
            for (p, &fe) in probs[local.clone()].iter_mut().zip(f.iter()) {
                *p = fe / sum;
            }
            c.shared(n * b);
            c.write(Buffer::Probs, n * b);

            // vectorized SpMM, features outer, neighbours inner
            for c0 in (0..d).step_by(w) {
                let c1 = (c0 + w).min(d);
                for e in edges.clone() {
                    let fe = exps[e - e0];
                    let src = g.csr_col_idx()[e];
                    for (o, &x) in tile[c0..c1].iter_mut().zip(&ops.v.row(src)[c0..c1]) {
                        *o += fe * x;
                    }
                }
            }
            tile.iter_mut().for_each(|o| *o /= sum);
            c.read(Buffer::Features, n * (d as u64) * b);
            c.transact(Stage::Spmm, n * tv);
            c.shared(n * tv * b + n * d as u64 * b);
        }
        c.shared(d as u64 * b);
        c.write(Buffer::Output, d as u64 * b);
        c.transact(Stage::Spmm, tv);
    }
    (out, probs)
}

fn prepare<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<Option<(DenseMatrix<T>, DenseMatrix<T>)>> {
    plan.validate()?;
    check_operands(g, q, k, v, kind)?;
    Ok(kind.l2_normalize_inputs.then(|| {
        let eps = T::of(kind.eps);
        (l2_normalize_rows(q, eps), l2_normalize_rows(k, eps))
    }))
}

type ModeFn<T> = fn(&Operands<'_, T>) -> Result<(DenseMatrix<T>, EdgeScalars<T>, ExecCounters)>;

fn run_mode<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
    mode: ModeFn<T>,
) -> Result<ForwardOutput<T>> {
    let unit_qk = prepare(g, q, k, v, kind, plan)?;
    let (qe, ke) = match &unit_qk {
        Some((a, b)) => (a, b),
        None => (q, k),
    };
    let ops = Operands {
        g,
        q: qe,
        k: ke,
        v,
        kind,
        plan,
    };
    let start = Instant::now();
    let (output, probs, mut counters) = mode(&ops)?;
    counters.elapsed_ns = start.elapsed().as_nanos() as u64;
    Ok(ForwardOutput {
        output,
        ctx: ForwardContext {
            probs,
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            unit_qk,
            kind: *kind,
            plan: *plan,
        },
        counters,
    })
}

/// Single fused launch over row blocks: warp-balanced SDDMM into shared
/// memory, redundancy-free softmax, vectorized SpMM. Fails when a block's
/// shared-memory need exceeds the plan's budget.
pub fn run_smmf<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<ForwardOutput<T>> {
    let plan = plan.with_strategy(Strategy::Smmf);
    run_mode(g, q, k, v, kind, &plan, fused::smmf)
}

/// Edge-parallel SDDMM launch, then a fused softmax + SpMM launch over row
/// blocks.
pub fn run_pmf<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<ForwardOutput<T>> {
    let plan = plan.with_strategy(Strategy::Pmf);
    run_mode(g, q, k, v, kind, &plan, fused::pmf)
}

/// Fused launch with the fixed feature-parallel mapping: each row is served
/// by `ceil(d / group_width)` groups that all repeat the softmax reductions
/// and recompute the exponentials during aggregation.
pub fn run_feature_parallel_baseline<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<ForwardOutput<T>> {
    let plan = plan.with_strategy(Strategy::FeatureParallel);
    run_mode(g, q, k, v, kind, &plan, baseline::feature_parallel)
}

/// Three launches (SDDMM, softmax, SpMM) with every intermediate in global
/// memory, using the default geometry.
pub fn run_unfused<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
) -> Result<ForwardOutput<T>> {
    run_unfused_with(g, q, k, v, kind, &FusionPlan::new(Strategy::Unfused, T::BYTES))
}

pub fn run_unfused_with<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<ForwardOutput<T>> {
    let plan = plan.with_strategy(Strategy::Unfused);
    run_mode(g, q, k, v, kind, &plan, unfused::unfused)
}

/// Runs whichever strategy `plan` names.
pub fn execute<T: Scalar>(
    g: &GraphTopology,
    q: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    v: &DenseMatrix<T>,
    kind: &SddmmKind,
    plan: &FusionPlan,
) -> Result<ForwardOutput<T>> {
    match plan.strategy {
        Strategy::Smmf => run_smmf(g, q, k, v, kind, plan),
        Strategy::Pmf => run_pmf(g, q, k, v, kind, plan),
        Strategy::FeatureParallel => run_feature_parallel_baseline(g, q, k, v, kind, plan),
        Strategy::Unfused => run_unfused_with(g, q, k, v, kind, plan),
    }
}
