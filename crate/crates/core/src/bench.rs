//! Synthetic benchmark scenarios: build a graph batch, project random
//! features, check that every requested mode agrees with the unfused run,
//! then time each mode and report counters.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{execute, ExecCounters, ForwardOutput};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, gen_random, gen_super_node, has_super_node, GraphTopology};
use crate::models::{bandwidth_utilization, ConvSpec, ConvWeights, Model};
use crate::scalar::{DType, Scalar};
use crate::schedule::{auto_strategy, AutoChoice, FusionPlan, Strategy};
use crate::tensor::{max_rel_diff, DenseMatrix};

/// Cross-mode agreement tolerance (max relative difference) for `dtype`.
pub fn agreement_tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F32 => 2e-5,
        DType::F64 => 1e-11,
    }
}

/// A mode to benchmark: a fixed strategy or the automatic choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModeRequest {
    Fixed(Strategy),
    Auto,
}

impl FromStr for ModeRequest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(ModeRequest::Auto)
        } else {
            s.parse().map(ModeRequest::Fixed)
        }
    }
}

impl TryFrom<String> for ModeRequest {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModeRequest> for String {
    fn from(m: ModeRequest) -> String {
        m.to_string()
    }
}

impl fmt::Display for ModeRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeRequest::Fixed(s) => write!(f, "{s}"),
            ModeRequest::Auto => f.write_str("auto"),
        }
    }
}

/// One scenario. Every key is optional in the JSON form; the defaults are
/// a scaled-down PATTERN-like batch (16 graphs of 119 nodes, average
/// in-degree 51.1, 128 features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub model: Model,
    /// Nodes per graph.
    pub nodes: usize,
    pub avg_degree: f64,
    /// In-degree of node 0 of every graph; plain random graphs when absent.
    pub hub_degree: Option<usize>,
    pub batch_count: usize,
    pub dim: usize,
    pub dtype: DType,
    pub seed: u64,
    pub strategies: Vec<ModeRequest>,
    pub deterministic: bool,
    /// Peak memory bandwidth in bytes/s; utilization is left empty without it.
    pub peak_bw: Option<f64>,
    pub shared_mem_bytes: usize,
    /// Timed repetitions per mode; the fastest is reported.
    pub timing_repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: Model::Gt,
            nodes: 119,
            avg_degree: 51.1,
            hub_degree: None,
            batch_count: 16,
            dim: 128,
            dtype: DType::F32,
            seed: 0,
            strategies: vec![
                ModeRequest::Fixed(Strategy::Unfused),
                ModeRequest::Fixed(Strategy::Smmf),
                ModeRequest::Fixed(Strategy::Pmf),
                ModeRequest::Fixed(Strategy::FeatureParallel),
                ModeRequest::Auto,
            ],
            deterministic: true,
            peak_bw: None,
            shared_mem_bytes: 49152,
            timing_repeats: 3,
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.nodes == 0 || self.batch_count == 0 {
            return bad("nodes and batch_count must be positive".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies requested".into());
        }
        if self.timing_repeats == 0 {
            return bad("timing_repeats must be positive".into());
        }
        if let Some(p) = self.peak_bw {
            if p.is_nan() || p <= 0.0 {
                return bad(format!("peak_bw must be positive, got {p}"));
            }
        }
        self.conv_spec().validate()
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::new(self.model, self.dim)
    }

    pub fn plan(&self) -> FusionPlan {
        let mut plan = FusionPlan::new(Strategy::Unfused, self.dtype.bytes());
        plan.shared_mem_budget_bytes = self.shared_mem_bytes;
        plan.deterministic = self.deterministic;
        plan
    }

    /// Block-diagonal batch of `batch_count` generated graphs.
    pub fn build_graph(&self) -> Result<GraphTopology> {
        let graphs = (0..self.batch_count as u64)
            .map(|i| {
                let seed = self.seed.wrapping_add(i);
                match self.hub_degree {
                    Some(h) => gen_super_node(self.nodes, self.avg_degree, h, seed),
                    None => gen_random(self.nodes, self.avg_degree, seed),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        batch_graphs(&graphs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphDescriptor {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub avg_degree: f64,
    pub max_degree: usize,
    pub min_degree: usize,
    pub has_super_node: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// Requested mode, e.g. `smmf` or `auto`.
    pub mode: String,
    /// Strategy that actually ran.
    pub strategy: Strategy,
    pub elapsed_ns: u64,
    pub counters: ExecCounters,
    pub speedup_vs_unfused: f64,
    pub bandwidth_utilization: Option<f64>,
    pub max_rel_diff_vs_unfused: f64,
    /// SHA-256 of the output's little-endian bytes.
    pub output_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub graph: GraphDescriptor,
    pub spec: ConvSpec,
    pub seed: u64,
    pub auto: AutoChoice,
    pub rows: Vec<BenchRow>,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "mode",
    "elapsed_ns",
    "kernel_launches",
    "global_bytes_read",
    "global_bytes_written",
    "shared_bytes",
    "memory_transactions",
    "softmax_scalar_ops",
    "max_group_load",
    "mean_group_load",
    "speedup_vs_unfused",
    "bandwidth_utilization",
];

impl BenchReport {
    pub fn row(&self, mode: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Rows without wall-clock fields, for reproducibility checks.
    pub fn timing_free(&self) -> Vec<(String, Strategy, ExecCounters, String)> {
        self.rows
            .iter()
            .map(|r| {
                let mut c = r.counters.clone();
                c.elapsed_ns = 0;
                (r.mode.clone(), r.strategy, c, r.output_digest.clone())
            })
            .collect()
    }

    pub fn csv_records(&self) -> Vec<[String; 12]> {
        self.rows
            .iter()
            .map(|r| {
                let c = &r.counters;
                [
                    r.mode.clone(),
                    r.elapsed_ns.to_string(),
                    c.kernel_launches.to_string(),
                    c.global_bytes_read().to_string(),
                    c.global_bytes_written().to_string(),
                    c.shared_bytes_accessed.to_string(),
                    c.memory_transactions().to_string(),
                    c.softmax_scalar_ops.to_string(),
                    c.max_group_load().to_string(),
                    format!("{:.3}", c.mean_group_load()),
                    format!("{:.4}", r.speedup_vs_unfused),
                    r.bandwidth_utilization.map(|u| format!("{u:.6}")).unwrap_or_default(),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for rec in self.csv_records() {
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let g = &self.graph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# Benchmark: {} d={} {}\n",
            self.spec.model, self.spec.dim, self.config.dtype
        );
        let _ = writeln!(
            s,
            "Graph: {} nodes, {} edges ({} graphs), avg in-degree {:.2}, max {}, super node: {}.  ",
            g.num_nodes, g.num_edges, self.config.batch_count, g.avg_degree, g.max_degree, g.has_super_node
        );
        let _ = writeln!(
            s,
            "Seed {}. Auto strategy: selected {}, executed {}.\n",
            self.seed, self.auto.selected, self.auto.executed
        );
        let _ = writeln!(s, "| {} |", CSV_COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(CSV_COLUMNS.len()));
        for rec in self.csv_records() {
            let cells: Vec<&str> = rec
                .iter()
                .map(|c| if c.is_empty() { "-" } else { c.as_str() })
                .collect();
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        let _ = writeln!(
            s,
            "\nAll modes agreed with `unfused` within {:e} before timing.",
            agreement_tolerance(self.config.dtype)
        );
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn digest<T: Scalar>(m: &DenseMatrix<T>) -> String {
    let mut h = Sha256::new();
    for &x in m.data() {
        h.update(x.le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    match config.dtype {
        DType::F32 => run_typed::<f32>(config),
        DType::F64 => run_typed::<f64>(config),
    }
}

fn run_typed<T: Scalar>(config: &BenchConfig) -> Result<BenchReport> {
    let g = config.build_graph()?;
    let stats = g.degree_stats();
    let spec = config.conv_spec();
    let kind = spec.kind();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x = DenseMatrix::<T>::random(g.num_nodes(), config.dim, &mut rng);
    let weights = ConvWeights::<T>::random(&spec, config.dim, &mut rng);
    let (q, k, v) = match &weights {
        ConvWeights::Attention { w_q, w_k, w_v } => (x.matmul(w_q)?, x.matmul(w_k)?, x.matmul(w_v)?),
        ConvWeights::Gat { w, a_src, a_dst } => {
            let h = x.matmul(w)?;
            (h.matmul(a_dst)?, h.matmul(a_src)?, h)
        }
    };

    let base = config.plan();
    let auto = auto_strategy(&g, &kind, &base, config.dim)?;
    let mut modes = vec![(String::from("unfused"), Strategy::Unfused)];
    for m in &config.strategies {
        let (name, strategy) = match m {
            ModeRequest::Fixed(s) => (s.to_string(), *s),
            ModeRequest::Auto => ("auto".to_string(), auto.executed),
        };
        if !modes.iter().any(|(n, _)| *n == name) {
            modes.push((name, strategy));
        }
    }
    let run = |s: Strategy| -> Result<ForwardOutput<T>> { execute(&g, &q, &k, &v, &kind, &base.with_strategy(s)) };

    // agreement gate: nothing is timed until every mode matches unfused
    let tol = agreement_tolerance(config.dtype);
    let reference = run(Strategy::Unfused)?;
    let mut checked = Vec::with_capacity(modes.len());
    for (name, strategy) in &modes {
        let out = run(*strategy)?;
        let (rel, max_abs, row, col) = max_rel_diff(&out.output, &reference.output);
        if rel.is_nan() || rel > tol {
            return Err(Error::ModeDisagreement {
                mode: name.clone(),
                reference: "unfused".into(),
                rel,
                tol,
                max_abs,
                row,
                col,
            });
        }
        log::info!("{name}: agrees with unfused (max rel diff {rel:.3e})");
        checked.push((rel, digest(&out.output), out.counters));
    }

    let mut rows = Vec::with_capacity(modes.len());
    for ((name, strategy), (rel, digest, counters)) in modes.iter().zip(checked) {
        let mut best = u64::MAX;
        for _ in 0..config.timing_repeats {
            let start = Instant::now();
            let out = run(*strategy)?;
            best = best.min(start.elapsed().as_nanos() as u64);
            debug_assert!(out.counters.same_model(&counters));
        }
        let best = best.max(1);
        let utilization = config
            .peak_bw
            .map(|peak| bandwidth_utilization(counters.global_bytes(), best as f64 * 1e-9, peak))
            .transpose()?;
        let mut counters = counters;
        counters.elapsed_ns = best;
        rows.push(BenchRow {
            mode: name.clone(),
            strategy: *strategy,
            elapsed_ns: best,
            counters,
            speedup_vs_unfused: 0.0,
            bandwidth_utilization: utilization,
            max_rel_diff_vs_unfused: rel,
            output_digest: digest,
        });
    }
    let unfused_ns = rows[0].elapsed_ns as f64;
    for r in &mut rows {
        r.speedup_vs_unfused = if r.mode == "unfused" {
            1.0
        } else {
            unfused_ns / r.elapsed_ns as f64
        };
    }

    Ok(BenchReport {
        config: config.clone(),
        graph: GraphDescriptor {
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            avg_degree: stats.avg_degree_f64(),
            max_degree: stats.max_degree,
            min_degree: stats.min_degree,
            has_super_node: has_super_node(&stats, config.shared_mem_bytes, config.dtype.bytes())?,
        },
        spec,
        seed: config.seed,
        auto,
        rows,
    })
}
