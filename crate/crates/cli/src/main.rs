//! `connie`: generate networks, simulate cascades and infer networks back.

mod config;
mod inputs;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use connie::{diffusion, eval, graph, solver};
use connie::{CascadeSet, Network, SolverOptions, TransmissionModel};

use config::{ExperimentConfig, GenerateSpec, NetworkSource};
use inputs::{read_interactions, WeightSpec};

const DEFAULT_RHO_GRID: &str = "log:0.01,1000,20";

#[derive(Parser)]
#[command(name = "connie", version, about = "Cascade simulation and network inference")]
struct Cli {
    /// Repeat for more log output; -v logs one line per solved node.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for simulation and inference [default: all cores].
    #[arg(long, global = true, env = "CONNIE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a weighted network and write it as TSV.
    GenerateNetwork(GenerateArgs),
    /// Simulate cascades over a network until an edge-coverage target.
    Simulate(SimulateArgs),
    /// Add Gaussian noise to the infection times of a cascade file.
    Perturb(PerturbArgs),
    /// Infer a network from cascades at a single sparsity weight.
    Infer(InferArgs),
    /// Infer over a grid of sparsity weights and score against the truth.
    Sweep(SweepArgs),
    /// Compare an inferred network with the true one.
    Evaluate(EvaluateArgs),
    /// Run a whole experiment from a JSON config.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphModel {
    Er,
    Pa,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    model: Option<GraphModel>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Edge count (er).
    #[arg(long)]
    edges: Option<usize>,
    /// Edges added per new node (pa).
    #[arg(long)]
    out_degree: Option<usize>,
    /// `uniform:LO,HI`, or `interactions:PATH` to take edges and weights from
    /// a count file (needs --xi and --phi, no --model).
    #[arg(long)]
    weights: Option<WeightSpec>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    /// Topology seed; uniform weights use SEED+1.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    net: PathBuf,
    /// Transmission model: exp:RATE, powerlaw:ALPHA[,TMIN], weibull:SCALE,SHAPE.
    #[arg(long = "w")]
    model: TransmissionModel,
    #[arg(long, default_value_t = config::default_coverage())]
    coverage: f64,
    #[arg(long, default_value_t = config::default_max_cascades())]
    max_cascades: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generation report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverOptions::default().grad_tol)]
    grad_tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = SolverOptions::default().zero_threshold)]
    zero_threshold: f64,
    #[arg(long, default_value_t = SolverOptions::default().init_a)]
    init_a: f64,
}

impl SolverArgs {
    fn options(&self, rho: f64) -> SolverOptions {
        SolverOptions {
            grad_tol: self.grad_tol,
            max_iter: self.max_iter,
            zero_threshold: self.zero_threshold,
            init_a: self.init_a,
            rho,
            record_history: false,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long = "w")]
    model: TransmissionModel,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-node solve report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long = "w")]
    model: TransmissionModel,
    /// `log:LO,HI,COUNT` (0 is prepended) or a comma-separated list.
    #[arg(long, default_value = DEFAULT_RHO_GRID)]
    rho_grid: String,
    #[command(flatten)]
    solver: SolverArgs,
    /// Evaluation report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Precision-recall curve (CSV).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    inferred: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "w")]
    model: Option<TransmissionModel>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    max_cascades: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, conflicts_with = "rho_grid")]
    rho: Option<f64>,
    #[arg(long)]
    rho_grid: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = solver::with_threads(threads, || dispatch(cli.command))
        .map_err(anyhow::Error::from)
        .and_then(|r| r);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenerateNetwork(a) => generate_network(a),
        Command::Simulate(a) => simulate(a),
        Command::Perturb(a) => perturb(a),
        Command::Infer(a) => infer(a),
        Command::Sweep(a) => sweep(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
    }
}

/// Reports a flag combination clap cannot express, with clap's exit code 2.
fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, msg)
        .exit()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_network(path: &Path) -> Result<Network> {
    graph::read_network_file(path).with_context(|| format!("reading network {}", path.display()))
}

fn load_cascades(path: &Path) -> Result<CascadeSet> {
    diffusion::read_cascades_file(path)
        .with_context(|| format!("reading cascades {}", path.display()))
}

fn save_network(net: &Network, path: &Path) -> Result<()> {
    graph::write_network_file(net, path).with_context(|| format!("writing {}", path.display()))
}

fn save_cascades(cs: &CascadeSet, path: &Path) -> Result<()> {
    diffusion::write_cascades_file(cs, path)
        .with_context(|| format!("writing {}", path.display()))
}

fn network_summary(net: &Network) -> serde_json::Value {
    let weights: Vec<f64> = net.edges().map(|(_, _, w)| w).collect();
    let (min, max, mean) = if weights.is_empty() {
        (None, None, None)
    } else {
        (
            Some(weights.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(weights.iter().sum::<f64>() / weights.len() as f64),
        )
    };
    json!({
        "nodes": net.n(),
        "edges": net.edge_count(),
        "weight_min": min,
        "weight_max": max,
        "weight_mean": mean,
    })
}

fn topology(spec: &GenerateSpec, seed: u64) -> Result<Network> {
    Ok(match spec.model.as_str() {
        "er" => {
            let m = spec.edges.context("the er model needs an edge count")?;
            graph::generate_erdos_renyi(spec.nodes, m, seed)?
        }
        "pa" => {
            let d = spec.out_degree.context("the pa model needs an out-degree")?;
            graph::generate_preferential_attachment(spec.nodes, d, seed)?
        }
        other => bail!("unknown network model {other:?} (expected er or pa)"),
    })
}

fn interaction_network(path: &Path, xi: f64, phi: f64, nodes: Option<usize>) -> Result<Network> {
    let counts = read_interactions(path)?;
    let needed = counts.keys().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = nodes.unwrap_or(needed);
    if n < needed {
        bail!("--nodes {n} is too small for node id {} in {}", needed - 1, path.display());
    }
    Ok(graph::weights_from_interactions(n, &counts, xi, phi)?)
}

fn reweight(net: Network, weights: Option<&WeightSpec>, seed: u64) -> Result<Network> {
    match weights {
        None => Ok(net),
        Some(&WeightSpec::Uniform { lo, hi }) => {
            Ok(graph::assign_uniform_weights(&net, lo, hi, seed)?)
        }
        Some(WeightSpec::Interactions(_)) => {
            bail!("interaction weights define their own edges and cannot reweight a topology")
        }
    }
}

fn generate_network(a: GenerateArgs) -> Result<()> {
    let net = if let Some(WeightSpec::Interactions(path)) = &a.weights {
        if a.model.is_some() {
            usage_error("--model cannot be combined with --weights interactions:PATH");
        }
        let (Some(xi), Some(phi)) = (a.xi, a.phi) else {
            usage_error("--weights interactions:PATH needs --xi and --phi");
        };
        interaction_network(path, xi, phi, a.nodes)?
    } else {
        let Some(model) = a.model else {
            usage_error("--model is required unless --weights interactions:PATH is given");
        };
        let Some(nodes) = a.nodes else {
            usage_error("--nodes is required");
        };
        let spec = match model {
            GraphModel::Er => GenerateSpec {
                model: "er".into(),
                nodes,
                edges: Some(a.edges.unwrap_or_else(|| usage_error("--model er needs --edges"))),
                out_degree: None,
            },
            GraphModel::Pa => GenerateSpec {
                model: "pa".into(),
                nodes,
                edges: None,
                out_degree: Some(
                    a.out_degree
                        .unwrap_or_else(|| usage_error("--model pa needs --out-degree")),
                ),
            },
        };
        reweight(topology(&spec, a.seed)?, a.weights.as_ref(), a.seed.wrapping_add(1))?
    };
    save_network(&net, &a.out)?;
    print_json(&network_summary(&net))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let net = load_network(&a.net)?;
    let (cs, report) =
        diffusion::generate_cascade_set(&net, &a.model, a.coverage, a.max_cascades, a.seed)?;
    save_cascades(&cs, &a.out)?;
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct NoiseReport {
    sigma: f64,
    noise_to_signal: f64,
    mean_infection_gap: f64,
}

fn add_noise(cs: &CascadeSet, sigma: f64, seed: u64) -> Result<(CascadeSet, NoiseReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (noisy, ratio) = diffusion::perturb_times(cs, sigma, &mut rng)?;
    let report = NoiseReport {
        sigma,
        noise_to_signal: ratio,
        mean_infection_gap: diffusion::mean_infection_gap(cs),
    };
    Ok((noisy, report))
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let cs = load_cascades(&a.cascades)?;
    let (noisy, report) = add_noise(&cs, a.sigma, a.seed)?;
    save_cascades(&noisy, &a.out)?;
    print_json(&report)
}

fn infer(a: InferArgs) -> Result<()> {
    let cs = load_cascades(&a.cascades)?;
    let (net, report) = solver::infer_network(&cs, &a.model, &a.solver.options(a.rho))?;
    log::info!("inferred {} edges in {:.2}s", net.edge_count(), report.wall_time_secs);
    save_network(&net, &a.out)?;
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    print_json(&json!({
        "nodes": report.nodes.len(),
        "converged_nodes": report.converged_nodes,
        "edges": report.total_edges,
    }))
}

fn sweep_summary(report: &connie::EvalReport) -> serde_json::Value {
    json!({
        "break_even": report.break_even,
        "break_even_extrapolated": report.break_even_extrapolated,
        "true_edges": report.true_edges,
        "mse_at_true_edge_count": report.mse_at_true_edge_count,
        "rho_at_true_edge_count": report.rho_at_true_edge_count,
    })
}

fn write_csv(report: &connie::EvalReport, path: &Path) -> Result<()> {
    let w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    Ok(eval::write_curve_csv(report, w)?)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let grid = eval::parse_rho_grid(&a.rho_grid)?;
    let cs = load_cascades(&a.cascades)?;
    let truth = load_network(&a.truth)?;
    let report = eval::pr_sweep(&cs, &a.model, &truth, &grid, &a.solver.options(0.0))?;
    write_json(&report, &a.out)?;
    if let Some(path) = &a.csv {
        write_csv(&report, path)?;
    }
    print_json(&sweep_summary(&report))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = load_network(&a.truth)?;
    let inferred = load_network(&a.inferred)?;
    let (precision, recall) = eval::precision_recall(&truth, &inferred)?;
    let mse = eval::mse(&truth, &inferred)?;
    print_json(&json!({
        "precision": precision,
        "recall": recall,
        "mse": mse,
        "true_edges": truth.edge_count(),
        "inferred_edges": inferred.edge_count(),
    }))
}

/// Seed offsets of each random stage of `run`.
const WEIGHT_SEED: u64 = 1;
const CASCADE_SEED: u64 = 2;
const NOISE_SEED: u64 = 3;

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &a.model {
        cfg.model = m.to_string();
    }
    if let Some(c) = a.coverage {
        cfg.coverage_target = c;
    }
    if let Some(m) = a.max_cascades {
        cfg.max_cascades = m;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(r) = a.rho {
        cfg.rho = Some(r);
        cfg.rho_grid = None;
    }
    if let Some(g) = a.rho_grid {
        cfg.rho_grid = Some(g);
        cfg.rho = None;
    }
    if let Some(d) = a.out_dir {
        cfg.output_dir = d;
    }
    cfg.check()?;
    let model: TransmissionModel = cfg
        .model
        .parse()
        .with_context(|| format!("transmission model {:?}", cfg.model))?;
    let weights = cfg
        .weights
        .as_deref()
        .map(|s| s.parse::<WeightSpec>().map_err(anyhow::Error::msg))
        .transpose()?;
    let grid = match (&cfg.rho, &cfg.rho_grid) {
        (Some(_), _) => None,
        (None, g) => Some(eval::parse_rho_grid(g.as_deref().unwrap_or(DEFAULT_RHO_GRID))?),
    };

    let seed = cfg.seed;
    let base = match &cfg.network {
        NetworkSource::Generate(spec) => topology(spec, seed)?,
        NetworkSource::File(path) => load_network(path)?,
        NetworkSource::Interactions { path, xi, phi, nodes } => {
            interaction_network(path, *xi, *phi, *nodes)?
        }
    };
    let truth = reweight(base, weights.as_ref(), seed.wrapping_add(WEIGHT_SEED))?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&cfg, &dir.join("config.json"))?;
    save_network(&truth, &dir.join("network.tsv"))?;

    let (cs, generation) = diffusion::generate_cascade_set(
        &truth,
        &model,
        cfg.coverage_target,
        cfg.max_cascades,
        seed.wrapping_add(CASCADE_SEED),
    )?;
    save_cascades(&cs, &dir.join("cascades.tsv"))?;
    write_json(&generation, &dir.join("generation.json"))?;

    let mut summary = json!({
        "network": network_summary(&truth),
        "cascades": generation.cascades,
        "coverage": generation.coverage,
    });

    let cs = if cfg.sigma > 0.0 {
        let (noisy, noise) = add_noise(&cs, cfg.sigma, seed.wrapping_add(NOISE_SEED))?;
        save_cascades(&noisy, &dir.join("cascades_noisy.tsv"))?;
        write_json(&noise, &dir.join("noise.json"))?;
        summary["noise_to_signal"] = json!(noise.noise_to_signal);
        noisy
    } else {
        cs
    };

    match (cfg.rho, grid) {
        (Some(rho), _) => {
            let (net, report) = solver::infer_network(&cs, &model, &cfg.solver.with_rho(rho))?;
            save_network(&net, &dir.join("inferred.tsv"))?;
            write_json(&report, &dir.join("solve.json"))?;
            let (precision, recall) = eval::precision_recall(&truth, &net)?;
            summary["inference"] = json!({
                "rho": rho,
                "edges": net.edge_count(),
                "precision": precision,
                "recall": recall,
                "mse": eval::mse(&truth, &net)?,
            });
        }
        (None, Some(grid)) => {
            let report = eval::pr_sweep(&cs, &model, &truth, &grid, &cfg.solver)?;
            write_json(&report, &dir.join("sweep.json"))?;
            write_csv(&report, &dir.join("curve.csv"))?;
            summary["sweep"] = sweep_summary(&report);
        }
        (None, None) => unreachable!("grid defaults when rho is unset"),
    }
    print_json(&summary)
}
