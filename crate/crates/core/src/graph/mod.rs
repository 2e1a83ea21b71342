//! Sparse adjacency storage.
//!
//! A [`GraphTopology`] keeps three views of the same edge set:
//!
//! * CSR, destination-major: row `v` lists the in-neighbours `u` of `v`,
//!   sorted by `u`. The position of an edge in `csr_col_idx` is its edge id,
//!   and every per-edge array ([`EdgeScalars`](crate::EdgeScalars)) is
//!   aligned to it.
//! * COO, in CSR edge order: `(coo_src[e], coo_dst[e])`.
//! * CSC, source-major: column `u` lists the out-neighbours of `u`;
//!   `csc_edge_perm` maps a CSC position back to the CSR edge id.
//!
//! Softmax and forward aggregation walk CSR rows; backward passes that
//! accumulate into source nodes walk CSC columns.

mod generate;
mod io;

pub use generate::{gen_random, gen_super_node};
pub use io::{read_edge_list, write_edge_list};

use num_rational::Ratio;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    num_nodes: usize,
    csr_row_ptr: Vec<usize>,
    csr_col_idx: Vec<usize>,
    coo_src: Vec<usize>,
    coo_dst: Vec<usize>,
    csc_col_ptr: Vec<usize>,
    csc_row_idx: Vec<usize>,
    csc_edge_perm: Vec<usize>,
}

/// In-degree statistics over CSR rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeStats {
    /// `E / N`, kept exact.
    pub avg_degree: Ratio<u64>,
    pub max_degree: usize,
    pub min_degree: usize,
}

impl DegreeStats {
    pub fn avg_degree_f64(&self) -> f64 {
        *self.avg_degree.numer() as f64 / *self.avg_degree.denom() as f64
    }
}

impl GraphTopology {
    /// Builds the canonical topology from an edge list. Edges may be given in
    /// any order; the result depends only on the edge set.
    pub fn from_coo(num_nodes: usize, src: &[usize], dst: &[usize]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::EdgeListLength {
                src: src.len(),
                dst: dst.len(),
            });
        }
        for &node in src.iter().chain(dst) {
            if node >= num_nodes {
                return Err(Error::NodeOutOfRange { node, num_nodes });
            }
        }

        let mut pairs: Vec<(usize, usize)> = dst.iter().copied().zip(src.iter().copied()).collect();
        pairs.sort_unstable();
        if let Some(w) = pairs.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge {
                src: w[0].1,
                dst: w[0].0,
            });
        }
        Ok(Self::from_sorted_pairs(num_nodes, &pairs))
    }

    /// `pairs` are `(dst, src)`, sorted and unique.
    fn from_sorted_pairs(num_nodes: usize, pairs: &[(usize, usize)]) -> Self {
        let num_edges = pairs.len();
        let mut csr_row_ptr = vec![0usize; num_nodes + 1];
        for &(v, _) in pairs {
            csr_row_ptr[v + 1] += 1;
        }
        for i in 0..num_nodes {
            csr_row_ptr[i + 1] += csr_row_ptr[i];
        }
        let coo_dst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let coo_src: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let csr_col_idx = coo_src.clone();

        // Counting sort by source; stable, so each column stays sorted by dst.
        let mut csc_col_ptr = vec![0usize; num_nodes + 1];
        for &u in &coo_src {
            csc_col_ptr[u + 1] += 1;
        }
        for i in 0..num_nodes {
            csc_col_ptr[i + 1] += csc_col_ptr[i];
        }
        let mut cursor = csc_col_ptr.clone();
        let mut csc_row_idx = vec![0usize; num_edges];
        let mut csc_edge_perm = vec![0usize; num_edges];
        for e in 0..num_edges {
            let u = coo_src[e];
            let slot = cursor[u];
            cursor[u] += 1;
            csc_row_idx[slot] = coo_dst[e];
            csc_edge_perm[slot] = e;
        }

        Self {
            num_nodes,
            csr_row_ptr,
            csr_col_idx,
            coo_src,
            coo_dst,
            csc_col_ptr,
            csc_row_idx,
            csc_edge_perm,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.csr_col_idx.len()
    }

    pub fn csr_row_ptr(&self) -> &[usize] {
        &self.csr_row_ptr
    }

    pub fn csr_col_idx(&self) -> &[usize] {
        &self.csr_col_idx
    }

    pub fn coo_src(&self) -> &[usize] {
        &self.coo_src
    }

    pub fn coo_dst(&self) -> &[usize] {
        &self.coo_dst
    }

    pub fn csc_col_ptr(&self) -> &[usize] {
        &self.csc_col_ptr
    }

    pub fn csc_row_idx(&self) -> &[usize] {
        &self.csc_row_idx
    }

    pub fn csc_edge_perm(&self) -> &[usize] {
        &self.csc_edge_perm
    }

    /// Edge-id range of CSR row `v` (the in-edges of `v`).
    pub fn row_edges(&self, v: usize) -> std::ops::Range<usize> {
        self.csr_row_ptr[v]..self.csr_row_ptr[v + 1]
    }

    /// CSC position range of column `u` (the out-edges of `u`).
    pub fn col_positions(&self, u: usize) -> std::ops::Range<usize> {
        self.csc_col_ptr[u]..self.csc_col_ptr[u + 1]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.csr_row_ptr[v + 1] - self.csr_row_ptr[v]
    }

    /// Edge-id range covered by a contiguous range of CSR rows.
    pub fn rows_edge_range(&self, rows: std::ops::Range<usize>) -> std::ops::Range<usize> {
        self.csr_row_ptr[rows.start]..self.csr_row_ptr[rows.end]
    }

    /// Edge list in CSR order, as `(src, dst)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.coo_src.iter().copied().zip(self.coo_dst.iter().copied())
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let degrees = (0..self.num_nodes).map(|v| self.in_degree(v));
        let max_degree = degrees.clone().max().unwrap_or(0);
        let min_degree = degrees.min().unwrap_or(0);
        let avg_degree = if self.num_nodes == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.num_edges() as u64, self.num_nodes as u64)
        };
        DegreeStats {
            avg_degree,
            max_degree,
            min_degree,
        }
    }

    /// Checks every structural invariant; used by tests and after file input.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.num_nodes;
        let e = self.num_edges();
        if self.csr_row_ptr.len() != n + 1 || self.csc_col_ptr.len() != n + 1 {
            return Err("offset arrays must have length N+1".into());
        }
        if self.csr_row_ptr[0] != 0 || self.csr_row_ptr[n] != e {
            return Err("csr_row_ptr must start at 0 and end at E".into());
        }
        if self.csr_row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err("csr_row_ptr must be non-decreasing".into());
        }
        for v in 0..n {
            let row = &self.csr_col_idx[self.row_edges(v)];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("row {v} is not strictly increasing"));
            }
            for eid in self.row_edges(v) {
                if self.coo_dst[eid] != v || self.coo_src[eid] != self.csr_col_idx[eid] {
                    return Err(format!("COO view disagrees with CSR at edge {eid}"));
                }
            }
        }
        if self.csr_col_idx.iter().any(|&u| u >= n) {
            return Err("column index out of range".into());
        }
        let mut seen = vec![false; e];
        for u in 0..n {
            for pos in self.col_positions(u) {
                let eid = self.csc_edge_perm[pos];
                if eid >= e || seen[eid] {
                    return Err("csc_edge_perm is not a permutation".into());
                }
                seen[eid] = true;
                if self.coo_src[eid] != u || self.coo_dst[eid] != self.csc_row_idx[pos] {
                    return Err(format!("CSC position {pos} disagrees with edge {eid}"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("csc_edge_perm does not cover all edges".into());
        }
        Ok(())
    }
}

/// Shared-memory capacity expressed in feature elements. A graph has a super
/// node when its maximum in-degree reaches this value.
pub fn super_node_threshold(shared_mem_bytes: usize, dtype_bytes: usize) -> Result<usize> {
    if dtype_bytes == 0 {
        return Err(Error::ZeroDtypeBytes);
    }
    Ok(shared_mem_bytes / dtype_bytes)
}

pub fn has_super_node(stats: &DegreeStats, shared_mem_bytes: usize, dtype_bytes: usize) -> Result<bool> {
    Ok(stats.max_degree >= super_node_threshold(shared_mem_bytes, dtype_bytes)?)
}

/// Block-diagonal union: graph `i` keeps its structure with node ids shifted
/// by the node count of the graphs before it.
pub fn batch_graphs(graphs: &[GraphTopology]) -> Result<GraphTopology> {
    if graphs.is_empty() {
        return Err(Error::InvalidParameter("cannot batch an empty list of graphs".into()));
    }
    let num_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let num_edges: usize = graphs.iter().map(|g| g.num_edges()).sum();
    let mut pairs = Vec::with_capacity(num_edges);
    let mut offset = 0;
    for g in graphs {
        pairs.extend(g.edges().map(|(u, v)| (v + offset, u + offset)));
        offset += g.num_nodes;
    }
    // Each component is already (dst, src)-sorted and offsets are increasing.
    debug_assert!(pairs.windows(2).all(|w| w[0] < w[1]));
    Ok(GraphTopology::from_sorted_pairs(num_nodes, &pairs))
}
