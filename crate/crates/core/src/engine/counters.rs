//! Modeled memory traffic and work counters.
//!
//! Every element moved to or from a dense matrix, an edge array or a row
//! statistic is charged `dtype_bytes` against the buffer it belongs to;
//! index arrays are charged [`INDEX_BYTES`] per entry. Memory transactions
//! are counted only for dense-matrix row accesses, `ceil(width /
//! vector_width)` per row touched.

use std::collections::BTreeMap;

use serde::Serialize;

/// Width of a modeled graph index (`u32`).
pub const INDEX_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReadWrite {
    pub read: u64,
    pub written: u64,
}

impl ReadWrite {
    pub fn total(&self) -> u64 {
        self.read + self.written
    }
}

/// Global-memory buffers the traffic is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Buffer {
    /// Q, K, V and incoming gradients.
    Features,
    /// O and outgoing node gradients.
    Output,
    /// Attention scores S.
    Scores,
    /// Shifted exponentials F.
    Exps,
    /// Attention probabilities P.
    Probs,
    /// Gradient of P.
    GradProbs,
    /// Gradient of S.
    GradScores,
    /// Per-row maximum / sum.
    RowStats,
    /// CSR / COO / CSC index arrays.
    Topology,
}

impl Buffer {
    pub fn name(self) -> &'static str {
        match self {
            Buffer::Features => "features",
            Buffer::Output => "output",
            Buffer::Scores => "scores",
            Buffer::Exps => "exps",
            Buffer::Probs => "probs",
            Buffer::GradProbs => "grad_probs",
            Buffer::GradScores => "grad_scores",
            Buffer::RowStats => "row_stats",
            Buffer::Topology => "topology",
        }
    }
}

/// Pipeline stage a memory transaction is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sddmm,
    Softmax,
    Spmm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTally {
    pub sddmm: u64,
    pub softmax: u64,
    pub spmm: u64,
}

impl StageTally {
    pub fn total(&self) -> u64 {
        self.sddmm + self.softmax + self.spmm
    }

    fn slot(&mut self, stage: Stage) -> &mut u64 {
        match stage {
            Stage::Sddmm => &mut self.sddmm,
            Stage::Softmax => &mut self.softmax,
            Stage::Spmm => &mut self.spmm,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecCounters {
    pub global: BTreeMap<Buffer, ReadWrite>,
    pub shared_bytes_accessed: u64,
    pub transactions: StageTally,
    pub kernel_launches: u64,
    /// Edges processed by each SDDMM work unit (a thread group; a whole row
    /// in the feature-parallel baseline), in schedule order.
    pub per_group_edge_loads: Vec<usize>,
    /// Scalar work of the softmax reductions (max, exp, sum), counted once
    /// per group that executes them.
    pub softmax_scalar_ops: u64,
    /// Exponentials recomputed in the aggregation stage because F was not
    /// cached.
    pub recomputed_exp_ops: u64,
    /// A fused backward plan did not fit and the unfused path ran instead.
    pub fallback_unfused: bool,
    pub elapsed_ns: u64,
}

impl ExecCounters {
    pub(crate) fn read(&mut self, buf: Buffer, bytes: u64) {
        self.global.entry(buf).or_default().read += bytes;
    }

    pub(crate) fn write(&mut self, buf: Buffer, bytes: u64) {
        self.global.entry(buf).or_default().written += bytes;
    }

    pub(crate) fn shared(&mut self, bytes: u64) {
        self.shared_bytes_accessed += bytes;
    }

    pub(crate) fn transact(&mut self, stage: Stage, count: u64) {
        *self.transactions.slot(stage) += count;
    }

    pub fn traffic(&self, buf: Buffer) -> ReadWrite {
        self.global.get(&buf).copied().unwrap_or_default()
    }

    pub fn global_bytes_read(&self) -> u64 {
        self.global.values().map(|rw| rw.read).sum()
    }

    pub fn global_bytes_written(&self) -> u64 {
        self.global.values().map(|rw| rw.written).sum()
    }

    pub fn global_bytes(&self) -> u64 {
        self.global_bytes_read() + self.global_bytes_written()
    }

    /// Global traffic of the per-edge forward intermediates S, F and P.
    pub fn edge_intermediate_bytes(&self) -> u64 {
        [Buffer::Scores, Buffer::Exps, Buffer::Probs]
            .iter()
            .map(|&b| self.traffic(b).total())
            .sum()
    }

    pub fn memory_transactions(&self) -> u64 {
        self.transactions.total()
    }

    pub fn max_group_load(&self) -> usize {
        self.per_group_edge_loads.iter().copied().max().unwrap_or(0)
    }

    pub fn min_group_load(&self) -> usize {
        self.per_group_edge_loads.iter().copied().min().unwrap_or(0)
    }

    pub fn mean_group_load(&self) -> f64 {
        if self.per_group_edge_loads.is_empty() {
            0.0
        } else {
            self.per_group_edge_loads.iter().sum::<usize>() as f64 / self.per_group_edge_loads.len() as f64
        }
    }

    pub(crate) fn merge(&mut self, other: &ExecCounters) {
        for (&buf, rw) in &other.global {
            let slot = self.global.entry(buf).or_default();
            slot.read += rw.read;
            slot.written += rw.written;
        }
        self.shared_bytes_accessed += other.shared_bytes_accessed;
        self.transactions.sddmm += other.transactions.sddmm;
        self.transactions.softmax += other.transactions.softmax;
        self.transactions.spmm += other.transactions.spmm;
        self.kernel_launches += other.kernel_launches;
        self.per_group_edge_loads.extend_from_slice(&other.per_group_edge_loads);
        self.softmax_scalar_ops += other.softmax_scalar_ops;
        self.recomputed_exp_ops += other.recomputed_exp_ops;
        self.fallback_unfused |= other.fallback_unfused;
    }

    /// Equality of everything except wall-clock time.
    pub fn same_model(&self, other: &ExecCounters) -> bool {
        let mut a = self.clone();
        a.elapsed_ns = other.elapsed_ns;
        &a == other
    }

    /// Flat `key -> integer` export.
    pub fn to_map(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        m.insert("elapsed_ns".into(), self.elapsed_ns);
        m.insert("kernel_launches".into(), self.kernel_launches);
        m.insert("global_bytes_read".into(), self.global_bytes_read());
        m.insert("global_bytes_written".into(), self.global_bytes_written());
        m.insert("shared_bytes".into(), self.shared_bytes_accessed);
        m.insert("memory_transactions".into(), self.memory_transactions());
        m.insert("transactions_sddmm".into(), self.transactions.sddmm);
        m.insert("transactions_softmax".into(), self.transactions.softmax);
        m.insert("transactions_spmm".into(), self.transactions.spmm);
        m.insert("softmax_scalar_ops".into(), self.softmax_scalar_ops);
        m.insert("recomputed_exp_ops".into(), self.recomputed_exp_ops);
        m.insert("max_group_load".into(), self.max_group_load() as u64);
        m.insert("min_group_load".into(), self.min_group_load() as u64);
        m.insert("fallback_unfused".into(), u64::from(self.fallback_unfused));
        for (buf, rw) in &self.global {
            m.insert(format!("global_{}_read", buf.name()), rw.read);
            m.insert(format!("global_{}_written", buf.name()), rw.written);
        }
        m
    }
}

/// Transactions for one access to a row of `width` elements.
pub fn vectorized_transactions(width: usize, vector_width: usize) -> u64 {
    width.div_ceil(vector_width) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transactions_round_up() {
        assert_eq!(vectorized_transactions(128, 4), 32);
        assert_eq!(vectorized_transactions(1, 4), 1);
        assert_eq!(vectorized_transactions(0, 4), 0);
    }

    #[test]
    fn merge_and_export() {
        let mut a = ExecCounters::default();
        a.read(Buffer::Scores, 8);
        a.kernel_launches = 1;
        a.per_group_edge_loads = vec![2, 3];
        let mut b = ExecCounters::default();
        b.write(Buffer::Scores, 4);
        b.kernel_launches = 2;
        b.per_group_edge_loads = vec![1];
        b.elapsed_ns = 99;
        a.merge(&b);
        assert_eq!(a.traffic(Buffer::Scores), ReadWrite { read: 8, written: 4 });
        assert_eq!(a.kernel_launches, 3);
        assert_eq!((a.max_group_load(), a.min_group_load()), (3, 1));
        assert_eq!(a.mean_group_load(), 2.0);
        let m = a.to_map();
        assert_eq!(m["global_scores_read"], 8);
        assert_eq!(m["global_bytes_written"], 4);
        assert!(a.same_model(&a.clone()));
    }
}
