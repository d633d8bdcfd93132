//! Command-line harness: dataset loading, synthetic graph generation,
//! simulation runs, packing plans, reference products, and config sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use gnnsim::config::EngineConfig;
use gnnsim::engine::Engine;
use gnnsim::gnn::{build_layers, ModelSpecFile};
use gnnsim::graph::{load_adjacency, Graph};
use gnnsim::graphgen::{gen_powerlaw_adjacency, random_features};
use gnnsim::io::{read_dense_csv, read_matrix_market, write_dense_csv_to, write_edge_list};
use gnnsim::matrix::{dense_matmul_oracle, SparseTile};
use gnnsim::balancer::{greedy_pack, PackOptions};
use gnnsim::pe::TraceSink;
use gnnsim::report::SimReport;

#[derive(Parser)]
#[command(name = "gnnsim", about = "Cycle-level systolic GNN accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an end-to-end simulation and write a JSON report.
    Simulate(SimulateArgs),
    /// Build a greedy packing plan for a set of sparse tiles.
    Pack(PackArgs),
    /// Generate a seeded power-law graph as an edge list.
    Gen(GenArgs),
    /// Multiply two CSV matrices with the reference product.
    Oracle(OracleArgs),
    /// Fan a grid of configurations out across threads.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Engine config JSON (defaults apply for missing fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Adjacency: Matrix Market or whitespace edge list.
    #[arg(long)]
    graph: PathBuf,
    /// Node features CSV; seeded random features when omitted.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Model spec JSON.
    #[arg(long)]
    model: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    strassen: Option<Toggle>,
    #[arg(long)]
    packing: Option<Toggle>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-cycle PE event trace of the aggregation passes.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Optional flat CSV table next to the JSON report.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Mirror each edge (undirected input).
    #[arg(long, default_value_t = true)]
    symmetrize: bool,
}

#[derive(Args)]
struct PackArgs {
    /// Matrix Market tiles to pack (all must share dimensions).
    #[arg(long, num_args = 1.., required = true)]
    tiles: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Packing plan output (JSON).
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 2.5)]
    exponent: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge list output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Product CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid JSON.
    #[arg(long)]
    grid: PathBuf,
    /// Merged results (JSON array); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional flat CSV of the merged totals.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Pack(args) => pack(args),
        Command::Gen(args) => gen(args),
        Command::Oracle(args) => oracle(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(EngineConfig::from_json(&text)?)
        }
        None => Ok(EngineConfig::default()),
    }
}

fn build_run(
    cfg_path: Option<&Path>,
    graph_path: &Path,
    features_path: Option<&Path>,
    model_path: &Path,
    strassen: Option<Toggle>,
    packing: Option<Toggle>,
    alpha: Option<f64>,
    seed: u64,
    symmetrize: bool,
) -> Result<(EngineConfig, Graph, Vec<gnnsim::gnn::LayerSpec>)> {
    let mut cfg = load_config(cfg_path)?;
    if let Some(t) = strassen {
        cfg.strassen = t.as_bool();
    }
    if let Some(t) = packing {
        cfg.packing = t.as_bool();
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    let cfg = cfg.validated()?;

    let model_text = fs::read_to_string(model_path)
        .with_context(|| format!("reading model spec {}", model_path.display()))?;
    let model = ModelSpecFile::from_json(&model_text)?;
    let layers = build_layers(&model, seed)?;
    if layers.is_empty() {
        bail!("model spec has no layers");
    }

    let graph = match features_path {
        Some(fp) => {
            let features = read_dense_csv(fp)?;
            let adjacency = load_adjacency(graph_path, Some(features.rows()), symmetrize)?;
            Graph::new(adjacency, features)?
        }
        None => {
            let adjacency = load_adjacency(graph_path, None, symmetrize)?;
            let n = adjacency.n_rows();
            let dim = layers[0].in_dim();
            Graph::new(adjacency, random_features(n, dim, seed))?
        }
    };
    Ok((cfg, graph, layers))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let (cfg, graph, layers) = build_run(
        args.config.as_deref(),
        &args.graph,
        args.features.as_deref(),
        &args.model,
        args.strassen,
        args.packing,
        args.alpha,
        args.seed,
        args.symmetrize,
    )?;
    let mut engine = Engine::new(cfg)?;
    if let Some(trace_path) = &args.trace {
        engine.set_trace(TraceSink::to_file(trace_path)?);
    }
    let (_, report) = engine.run_inference(&graph, &layers, args.seed)?;
    fs::write(&args.report, report.to_json()?)
        .with_context(|| format!("writing report {}", args.report.display()))?;
    if let Some(csv) = &args.csv {
        fs::write(csv, report.to_csv())?;
    }
    println!(
        "simulated {} layers on {} nodes: {} cycles total, verified = {}",
        report.layers.len(),
        graph.n_nodes,
        report.totals.overall.cycles,
        report.verified
    );
    Ok(())
}

fn pack(args: PackArgs) -> Result<()> {
    let tiles: Vec<SparseTile> = args
        .tiles
        .iter()
        .map(|p| read_matrix_market(p).map_err(Into::into))
        .collect::<Result<_>>()?;
    let opts = PackOptions { alpha: args.alpha, ..Default::default() };
    let (plan, packed) = greedy_pack(&tiles, opts)?;
    fs::write(&args.plan, serde_json::to_string_pretty(&plan)?)?;
    println!(
        "packed {} group(s), {} leftover(s) from {} tile(s)",
        packed.len(),
        plan.leftovers.len(),
        args.tiles.len()
    );
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let adj = gen_powerlaw_adjacency(args.nodes, args.exponent, args.seed)?;
    write_edge_list(&args.out, &adj)?;
    println!(
        "wrote {} nodes, {} directed edges to {}",
        args.nodes,
        adj.nnz(),
        args.out.display()
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let a = read_dense_csv(&args.a)?;
    let b = read_dense_csv(&args.b)?;
    let c = dense_matmul_oracle(&a, &b)?;
    match &args.out {
        Some(p) => {
            let mut w = std::io::BufWriter::new(fs::File::create(p)?);
            write_dense_csv_to(&mut w, &c)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_dense_csv_to(&mut stdout, &c)?;
        }
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct SweepGrid {
    #[serde(default = "default_nodes")]
    nodes: Vec<usize>,
    #[serde(default = "default_exponent")]
    exponent: f64,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_toggles")]
    strassen: Vec<bool>,
    #[serde(default = "default_toggles")]
    packing: Vec<bool>,
    #[serde(default = "default_alphas")]
    alpha: Vec<f64>,
    model: ModelSpecFile,
    #[serde(default)]
    config: Option<EngineConfig>,
}

fn default_nodes() -> Vec<usize> {
    vec![200]
}
fn default_exponent() -> f64 {
    2.5
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_toggles() -> Vec<bool> {
    vec![true, false]
}
fn default_alphas() -> Vec<f64> {
    vec![0.5]
}

#[derive(serde::Serialize)]
struct SweepRow {
    nodes: usize,
    seed: u64,
    strassen: bool,
    packing: bool,
    alpha: f64,
    report: SimReport,
}

fn sweep(args: SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.grid)?;
    let grid: SweepGrid =
        serde_json::from_str(&text).with_context(|| "parsing sweep grid JSON")?;

    let mut cases = Vec::new();
    for &nodes in &grid.nodes {
        for &seed in &grid.seeds {
            for &strassen in &grid.strassen {
                for &packing in &grid.packing {
                    for &alpha in &grid.alpha {
                        cases.push((nodes, seed, strassen, packing, alpha));
                    }
                }
            }
        }
    }

    let rows: Vec<SweepRow> = cases
        .par_iter()
        .map(|&(nodes, seed, strassen, packing, alpha)| -> Result<SweepRow> {
            let layers = build_layers(&grid.model, seed)?;
            let dim = layers[0].in_dim();
            let adjacency = gen_powerlaw_adjacency(nodes, grid.exponent, seed)?;
            let graph = Graph::new(adjacency, random_features(nodes, dim, seed))?;
            let cfg = EngineConfig {
                strassen,
                packing,
                alpha,
                ..grid.config.clone().unwrap_or_default()
            }
            .validated()?;
            let mut engine = Engine::new(cfg)?;
            let (_, report) = engine.run_inference(&graph, &layers, seed)?;
            Ok(SweepRow { nodes, seed, strassen, packing, alpha, report })
        })
        .collect::<Result<_>>()?;

    let json = serde_json::to_string_pretty(&rows)?;
    match &args.out {
        Some(p) => fs::write(p, &json)?,
        None => println!("{json}"),
    }
    if let Some(csv_path) = &args.csv {
        let mut csv = String::from(
            "nodes,seed,strassen,packing,alpha,total_cycles,transformation_cycles,\
             aggregation_cycles,mult_invocations,agg_utilization,energy_total_pj\n",
        );
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:.6},{:.3}\n",
                r.nodes,
                r.seed,
                r.strassen,
                r.packing,
                r.alpha,
                r.report.totals.overall.cycles,
                r.report.totals.transformation.cycles,
                r.report.totals.aggregation.cycles,
                r.report.totals.transformation.counters.mult_invocations,
                r.report.totals.aggregation.utilization,
                r.report.totals.overall.energy.total_pj,
            ));
        }
        fs::write(csv_path, csv)?;
    }
    eprintln!("swept {} case(s)", rows.len());
    Ok(())
}

