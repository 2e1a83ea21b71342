//! Bi-level scheduling: which rows or edges a block owns (inter-block) and
//! how a block splits its edges across thread groups (intra-block), plus the
//! rule choosing between the two fused strategies.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{super_node_threshold, DegreeStats, GraphTopology};
use crate::kernels::{SddmmKind, SddmmVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// One fused launch; scores and exponentials live in shared memory.
    Smmf,
    /// Edge-parallel SDDMM launch, then a fused softmax + SpMM launch.
    Pmf,
    /// Three separate launches with global-memory intermediates.
    Unfused,
    /// One fused launch with the fixed feature-parallel mapping for all
    /// three stages.
    FeatureParallel,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Unfused,
        Strategy::Smmf,
        Strategy::Pmf,
        Strategy::FeatureParallel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Smmf => "smmf",
            Strategy::Pmf => "pmf",
            Strategy::Unfused => "unfused",
            Strategy::FeatureParallel => "feature-parallel",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smmf" => Ok(Strategy::Smmf),
            "pmf" => Ok(Strategy::Pmf),
            "unfused" => Ok(Strategy::Unfused),
            "feature-parallel" | "baseline" => Ok(Strategy::FeatureParallel),
            other => Err(Error::InvalidParameter(format!("unknown strategy `{other}`"))),
        }
    }
}

pub const DEFAULT_ROWS_PER_BLOCK: usize = 4;
pub const DEFAULT_GROUPS_PER_BLOCK: usize = 4;
pub const DEFAULT_GROUP_WIDTH: usize = 32;
pub const DEFAULT_VECTOR_WIDTH: usize = 4;
pub const DEFAULT_SHARED_MEM_BYTES: usize = 48 * 1024;

/// Strategy plus block geometry. Immutable input to the engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub strategy: Strategy,
    pub rows_per_block: usize,
    pub groups_per_block: usize,
    /// Lanes per group (a warp).
    pub group_width: usize,
    /// Elements per modeled memory transaction; 1, 2 or 4.
    pub vector_width: usize,
    pub shared_mem_budget_bytes: usize,
    pub dtype_bytes: usize,
    /// Edge-parallel block count for the PMF SDDMM launch; `None` derives it
    /// from the edge count.
    pub pmf_blocks: Option<usize>,
    /// Run blocks in index order on the calling thread.
    pub deterministic: bool,
}

impl FusionPlan {
    pub fn new(strategy: Strategy, dtype_bytes: usize) -> Self {
        Self {
            strategy,
            rows_per_block: DEFAULT_ROWS_PER_BLOCK,
            groups_per_block: DEFAULT_GROUPS_PER_BLOCK,
            group_width: DEFAULT_GROUP_WIDTH,
            vector_width: DEFAULT_VECTOR_WIDTH,
            shared_mem_budget_bytes: DEFAULT_SHARED_MEM_BYTES,
            dtype_bytes,
            pmf_blocks: None,
            deterministic: false,
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.rows_per_block == 0 {
            return bad("rows_per_block must be at least 1");
        }
        if self.groups_per_block == 0 {
            return bad("groups_per_block must be at least 1");
        }
        if self.group_width == 0 {
            return bad("group_width must be at least 1");
        }
        if ![1, 2, 4].contains(&self.vector_width) {
            return bad("vector_width must be 1, 2 or 4");
        }
        if self.dtype_bytes == 0 {
            return Err(Error::ZeroDtypeBytes);
        }
        if self.pmf_blocks == Some(0) {
            return bad("pmf_blocks must be at least 1");
        }
        Ok(())
    }

    /// Block count of the edge-parallel SDDMM launch:
    /// `ceil(E / (groups_per_block * group_width))` unless overridden.
    pub fn edge_parallel_blocks(&self, num_edges: usize) -> usize {
        self.pmf_blocks
            .unwrap_or_else(|| num_edges.div_ceil(self.groups_per_block * self.group_width))
            .max(1)
    }
}

/// PMF exactly when the graph has a super node and the layer uses the dot
/// operator; SMMF otherwise.
pub fn select_strategy(
    stats: &DegreeStats,
    kind: &SddmmKind,
    shared_mem_bytes: usize,
    dtype_bytes: usize,
) -> Result<Strategy> {
    let threshold = super_node_threshold(shared_mem_bytes, dtype_bytes)?;
    let super_node = stats.max_degree >= threshold;
    Ok(if super_node && kind.variant == SddmmVariant::Dot {
        Strategy::Pmf
    } else {
        Strategy::Smmf
    })
}

/// Splits `range` into `parts` contiguous chunks whose sizes differ by at
/// most one; the first `len % parts` chunks get the extra element.
pub fn balanced_split(range: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    assert!(parts > 0, "balanced_split needs at least one part");
    let len = range.len();
    let (base, extra) = (len / parts, len % parts);
    let mut start = range.start;
    (0..parts)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Node-parallel inter-block schedule: consecutive row ranges of
/// `rows_per_block` rows, the last possibly short.
pub fn partition_blocks(g: &GraphTopology, rows_per_block: usize) -> Vec<Range<usize>> {
    assert!(rows_per_block > 0, "rows_per_block must be at least 1");
    let n = g.num_nodes();
    (0..n.div_ceil(rows_per_block))
        .map(|b| b * rows_per_block..((b + 1) * rows_per_block).min(n))
        .collect()
}

/// One block's intra-block edge split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAssignment {
    pub block_id: usize,
    pub row_range: Range<usize>,
    /// `(group_id, edge-id range)`, ordered by edge id.
    pub per_group_edges: Vec<(usize, Range<usize>)>,
}

impl BlockAssignment {
    pub fn loads(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_group_edges.iter().map(|(_, r)| r.len())
    }
}

/// Warp-balanced split of all edges in `row_range` across the block's
/// groups. Chunks may straddle row boundaries.
pub fn warp_balance(
    g: &GraphTopology,
    block_id: usize,
    row_range: Range<usize>,
    groups_per_block: usize,
) -> BlockAssignment {
    let edges = g.rows_edge_range(row_range.clone());
    BlockAssignment {
        block_id,
        row_range,
        per_group_edges: balanced_split(edges, groups_per_block)
            .into_iter()
            .enumerate()
            .collect(),
    }
}

/// Edge-parallel inter-block schedule: `num_blocks` contiguous edge ranges
/// of near-equal size covering `0..E`. All ranges are empty when `E = 0`.
pub fn edge_parallel_partition(g: &GraphTopology, num_blocks: usize) -> Vec<Range<usize>> {
    balanced_split(0..g.num_edges(), num_blocks)
}

/// Shared bytes a fused block needs: a score buffer and an exponential
/// buffer for every edge of the block, plus the output tile.
pub fn shared_mem_usage(plan: &FusionPlan, block_max_edges: usize, d: usize) -> usize {
    plan.dtype_bytes * (block_max_edges * 2 + plan.rows_per_block * d)
}

/// First block whose SMMF shared-memory need exceeds the budget, as
/// `(block, required_bytes)`.
pub fn smmf_infeasible_block(g: &GraphTopology, plan: &FusionPlan, d: usize) -> Option<(usize, usize)> {
    partition_blocks(g, plan.rows_per_block)
        .into_iter()
        .enumerate()
        .map(|(b, rows)| (b, shared_mem_usage(plan, g.rows_edge_range(rows).len(), d)))
        .find(|&(_, need)| need > plan.shared_mem_budget_bytes)
}

pub fn check_smmf_feasible(g: &GraphTopology, plan: &FusionPlan, d: usize) -> Result<()> {
    match smmf_infeasible_block(g, plan, d) {
        Some((block, required)) => Err(Error::SharedMemoryExceeded {
            block,
            required,
            budget: plan.shared_mem_budget_bytes,
        }),
        None => Ok(()),
    }
}

/// Outcome of automatic strategy selection for a concrete graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AutoChoice {
    /// What the selection rule picked.
    pub selected: Strategy,
    /// What will run: the selection, or `Unfused` when the selected SMMF
    /// plan does not fit in shared memory.
    pub executed: Strategy,
}

impl AutoChoice {
    pub fn fell_back(&self) -> bool {
        self.selected != self.executed
    }
}

pub fn auto_strategy(g: &GraphTopology, kind: &SddmmKind, plan: &FusionPlan, d: usize) -> Result<AutoChoice> {
    let selected = select_strategy(&g.degree_stats(), kind, plan.shared_mem_budget_bytes, plan.dtype_bytes)?;
    let executed = if selected == Strategy::Smmf && smmf_infeasible_block(g, plan, d).is_some() {
        Strategy::Unfused
    } else {
        selected
    };
    Ok(AutoChoice { selected, executed })
}
