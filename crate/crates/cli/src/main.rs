use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fusedgnn::autograd::{finite_difference_check, LossSpec, GRADCHECK_DENOM_FLOOR};
use fusedgnn::bench::{agreement_tolerance, run_benchmark, BenchConfig};
use fusedgnn::graph::write_edge_list;
use fusedgnn::kernels::{dense_oracle_forward, reference_forward, ORACLE_MAX_NODES};
use fusedgnn::models::{ConvSpec, Model};
use fusedgnn::tensor::max_rel_diff;
use fusedgnn::{
    execute, gen_random, gen_super_node, DType, DenseMatrix, FusionPlan, GraphTopology, Scalar, SddmmVariant, Strategy,
};

const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "fusedgnn",
    version,
    about = "Fused sparse attention kernels: verification, gradient checks and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every execution mode and compare against the dense oracle.
    Verify(VerifyArgs),
    /// Finite-difference check of the fused backward pass (f64).
    Gradcheck(GradcheckArgs),
    /// Run a benchmark scenario from a JSON config.
    Bench(BenchArgs),
    /// Write a generated graph as an edge list.
    GenGraph(GenGraphArgs),
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 4.0)]
    avg_degree: f64,
    #[arg(long)]
    hub_degree: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GraphArgs {
    fn build(&self) -> Result<GraphTopology> {
        Ok(match self.hub_degree {
            Some(h) => gen_super_node(self.nodes, self.avg_degree, h, self.seed)?,
            None => gen_random(self.nodes, self.avg_degree, self.seed)?,
        })
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "gt")]
    model: Model,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    /// Only run this strategy (unfused, smmf, pmf, feature-parallel).
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    rows_per_block: Option<usize>,
    #[arg(long)]
    groups_per_block: Option<usize>,
    #[arg(long)]
    vector_width: Option<usize>,
    #[arg(long)]
    shared_mem_bytes: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "gt")]
    model: Model,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    md: Option<PathBuf>,
}

#[derive(Args)]
struct GenGraphArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => verify(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Bench(a) => bench(&a),
        Command::GenGraph(a) => gen_graph(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn operands<T: Scalar>(g: &GraphTopology, spec: &ConvSpec, seed: u64) -> [DenseMatrix<T>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.num_nodes();
    let qk = if spec.kind().variant == SddmmVariant::Add {
        1
    } else {
        spec.dim
    };
    [
        DenseMatrix::random(n, qk, &mut rng),
        DenseMatrix::random(n, qk, &mut rng),
        DenseMatrix::random(n, spec.dim, &mut rng),
    ]
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    match a.dtype {
        DType::F32 => verify_typed::<f32>(a),
        DType::F64 => verify_typed::<f64>(a),
    }
}

fn verify_typed<T: Scalar>(a: &VerifyArgs) -> Result<bool> {
    let g = a.graph.build()?;
    let spec = ConvSpec::new(a.model, a.dim);
    spec.validate()?;
    let kind = spec.kind();
    let [q, k, v] = operands::<T>(&g, &spec, a.graph.seed);
    let (q64, k64, v64) = (q.cast::<f64>(), k.cast::<f64>(), v.cast::<f64>());
    let reference = if g.num_nodes() <= ORACLE_MAX_NODES {
        println!("reference: dense oracle (f64)");
        dense_oracle_forward(&g, &q64, &k64, &v64, &kind)?.output
    } else {
        println!("reference: unfused kernels (f64), graph too large for the dense oracle");
        reference_forward(&g, &q64, &k64, &v64, &kind)?
    };

    let mut plan = FusionPlan::new(Strategy::Unfused, T::BYTES);
    if let Some(x) = a.rows_per_block {
        plan.rows_per_block = x;
    }
    if let Some(x) = a.groups_per_block {
        plan.groups_per_block = x;
    }
    if let Some(x) = a.vector_width {
        plan.vector_width = x;
    }
    if let Some(x) = a.shared_mem_bytes {
        plan.shared_mem_budget_bytes = x;
    }
    let tol = agreement_tolerance(a.dtype);
    let strategies = match a.strategy {
        Some(s) => vec![s],
        None => Strategy::ALL.to_vec(),
    };

    println!(
        "graph: {} nodes, {} edges, max in-degree {}; model {}, d={}, {}",
        g.num_nodes(),
        g.num_edges(),
        g.degree_stats().max_degree,
        a.model,
        a.dim,
        a.dtype
    );
    let mut ok = true;
    for s in strategies {
        match execute(&g, &q, &k, &v, &kind, &plan.with_strategy(s)) {
            Ok(run) => {
                let (rel, abs, row, col) = max_rel_diff(&run.output, &reference);
                let pass = rel <= tol;
                ok &= pass;
                println!(
                    "{:<17} {}  max rel diff {rel:.3e} (abs {abs:.3e} at [{row}, {col}])  launches {}",
                    s.name(),
                    if pass { "PASS" } else { "FAIL" },
                    run.counters.kernel_launches
                );
            }
            Err(fusedgnn::Error::SharedMemoryExceeded {
                block,
                required,
                budget,
            }) if a.strategy.is_none() => {
                println!(
                    "{:<17} SKIP  block {block} needs {required} B of shared memory, budget {budget} B",
                    s.name()
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ok)
}

fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let g = a.graph.build()?;
    let spec = ConvSpec::new(a.model, a.dim);
    spec.validate()?;
    let [q, k, v] = operands::<f64>(&g, &spec, a.graph.seed);
    let r = finite_difference_check(&g, &q, &k, &v, &spec.kind(), &LossSpec::Sum, a.h)?;
    println!(
        "model {} nodes {} edges {} d={} h={:e}: max relative error {:.3e} over {} entries (denominator floor {:e})",
        a.model,
        g.num_nodes(),
        g.num_edges(),
        a.dim,
        a.h,
        r.max_rel_error,
        r.entries_checked,
        GRADCHECK_DENOM_FLOOR
    );
    println!(
        "worst: d{}[{}, {}] analytic {:.6e} numeric {:.6e}",
        r.worst.0, r.worst.1, r.worst.2, r.analytic, r.numeric
    );
    let pass = r.max_rel_error <= GRADCHECK_TOL;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn bench(a: &BenchArgs) -> Result<bool> {
    let cfg = BenchConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let report = run_benchmark(&cfg)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    report.write_csv(BufWriter::new(file))?;
    if let Some(md) = &a.md {
        std::fs::write(md, report.to_markdown()).with_context(|| format!("writing {}", md.display()))?;
    }
    for r in &report.rows {
        println!(
            "{:<17} {:>12} ns  launches {}  global bytes {}  speedup {:.2}",
            r.mode,
            r.elapsed_ns,
            r.counters.kernel_launches,
            r.counters.global_bytes(),
            r.speedup_vs_unfused
        );
    }
    Ok(true)
}

fn gen_graph(a: &GenGraphArgs) -> Result<bool> {
    if a.graph.nodes == 0 {
        bail!("--nodes must be positive");
    }
    let g = a.graph.build()?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    write_edge_list(&g, &mut w)?;
    w.flush()?;
    println!(
        "wrote {} nodes, {} edges to {}",
        g.num_nodes(),
        g.num_edges(),
        a.out.display()
    );
    Ok(true)
}
