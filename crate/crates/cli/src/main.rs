//! `svrcd`: synthetic-data experiment harness for sparse DAG structure
//! learning on discrete data.
//!
//! Subcommands: `generate` (graph + dataset synthesis), `learn` (fit one
//! dataset), `evaluate` (compare edge lists), `experiment` (replicated
//! sweeps with CSV/JSON reports). Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

mod config;
mod hc;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{ExpMode, ExperimentConfig, GraphType, HyperConfig};
use runner::{ensure_dir, gen_graph, write_atomic, Seeds};
use svrcd::graph;
use svrcd::metrics::{evaluate, CSV_HEADER};
use svrcd::model;
use svrcd::optim;

#[derive(Parser)]
#[command(name = "svrcd", version, about = "Sparse DAG structure learning harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a truth graph and a sampled dataset.
    Generate(GenerateArgs),
    /// Fit a dataset and write the learned edge list and trace.
    Learn(LearnArgs),
    /// Score an estimated edge list against a truth edge list.
    Evaluate(EvaluateArgs),
    /// Run a replicated study: sweeps, baseline comparison, scalability, noise.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "bipartite")]
    graph_type: GraphType,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of cells to corrupt after sampling.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HyperFlags {
    // Negative values parse here and are rejected by validation, which gives
    // a clearer message than a flag-parse failure.
    #[arg(long, allow_negative_numbers = true)]
    lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Inner steps per block epoch (default: one per dataset row).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
}

impl HyperFlags {
    fn merge_into(&self, hyper: &mut HyperConfig) {
        if let Some(v) = self.lambda1 {
            hyper.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            hyper.lambda2 = v;
        }
        if let Some(v) = self.gamma {
            hyper.gamma = v;
        }
        if self.m.is_some() {
            hyper.m = self.m;
        }
        if let Some(v) = self.sweeps {
            hyper.sweeps = v;
        }
        if let Some(v) = self.tol {
            hyper.tol = v;
        }
        if let Some(v) = self.tau {
            hyper.tau = v;
        }
    }
}

#[derive(Args)]
struct LearnArgs {
    /// Dataset CSV (header x0,x1,...; integer levels).
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated edge list CSV.
    estimated: PathBuf,
    /// Truth edge list CSV.
    truth: PathBuf,
    /// Node count override when isolated tail nodes are absent from both lists.
    #[arg(long)]
    p: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ExpMode>,
    #[arg(long, value_enum)]
    graph_type: Option<GraphType>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[command(flatten)]
    hyper: HyperFlags,
    /// Comma-separated flip fractions for the noise mode.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_parents: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors that are the caller's fault (bad flags, malformed config); they
/// exit with code 1 instead of 2.
struct UsageError(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                _ => 1,
            };
            eprint!("{e}");
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Learn(a) => cmd_learn(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Flow::Usage(UsageError(msg))) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Flow::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

enum Flow {
    Usage(UsageError),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Flow {
    fn from(e: anyhow::Error) -> Self {
        Flow::Runtime(e)
    }
}

impl From<UsageError> for Flow {
    fn from(e: UsageError) -> Self {
        Flow::Usage(e)
    }
}

type CmdResult = Result<(), Flow>;

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    if a.p < 2 {
        return Err(UsageError("p must be at least 2".into()).into());
    }
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(UsageError("noise must lie in [0, 1]".into()).into());
    }
    let seeds = Seeds::derive(a.seed);
    let spec = model::VariableSpec::binary(a.p);
    let truth = gen_graph(a.graph_type, a.p, seeds.graph)?;
    let cpds = model::gen_true_cpds(&truth, &spec, 0.5, 1.5, seeds.cpd);
    let clean = model::sample_dataset(&truth, &cpds, a.n, seeds.data)
        .context("sampling failed")
        .map_err(Flow::Runtime)?;
    let dataset = if a.noise > 0.0 {
        model::inject_noise(&clean, a.noise, seeds.noise)
    } else {
        clean
    };
    ensure_dir(&a.out)?;
    write_atomic(&a.out.join("dataset.csv"), model::format_csv(&dataset).as_bytes())?;
    write_atomic(
        &a.out.join("truth_edges.csv"),
        graph::format_edge_list(&truth).as_bytes(),
    )?;
    let meta = serde_json::json!({
        "graph_type": a.graph_type,
        "p": a.p,
        "n": a.n,
        "seed": a.seed,
        "noise": a.noise,
        "s0": truth.edge_count(),
    });
    write_atomic(
        &a.out.join("generate.json"),
        (serde_json::to_string_pretty(&meta).map_err(anyhow::Error::from)? + "\n").as_bytes(),
    )?;
    println!(
        "generated {} nodes / {} edges, {} rows -> {}",
        a.p,
        truth.edge_count(),
        a.n,
        a.out.display()
    );
    Ok(())
}

fn cmd_learn(a: LearnArgs) -> CmdResult {
    let mut hyper = HyperConfig::default();
    a.hyper.merge_into(&mut hyper);
    let d = model::read_csv(&a.dataset)
        .with_context(|| format!("cannot read dataset {}", a.dataset.display()))
        .map_err(Flow::Runtime)?;
    let hp = hyper.to_hyper_params();
    let res = optim::run(&d, &hp, a.seed)
        .context("learning failed")
        .map_err(Flow::Runtime)?;
    ensure_dir(&a.out)?;
    write_atomic(&a.out.join("edges.csv"), graph::format_edge_list(&res.graph).as_bytes())?;
    write_atomic(&a.out.join("trace.csv"), optim::format_trace(&res.trace).as_bytes())?;
    let summary = serde_json::json!({
        "p": d.p(),
        "n": d.n(),
        "seed": a.seed,
        "hyper": hyper,
        "edges": res.graph.edge_count(),
        "sweeps_used": res.sweeps_used,
    });
    write_atomic(
        &a.out.join("learn.json"),
        (serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n").as_bytes(),
    )?;
    eprintln!("wall time {:.2}s", res.wall.as_secs_f64());
    println!(
        "learned {} edges in {} sweeps -> {}",
        res.graph.edge_count(),
        res.sweeps_used,
        a.out.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let est = graph::read_edge_list(&a.estimated)
        .with_context(|| format!("cannot read {}", a.estimated.display()))
        .map_err(Flow::Runtime)?;
    let truth = graph::read_edge_list(&a.truth)
        .with_context(|| format!("cannot read {}", a.truth.display()))
        .map_err(Flow::Runtime)?;
    let (est, truth) = match a.p {
        Some(p) => {
            let lift = |g: &graph::DagGraph| -> Result<graph::DagGraph, UsageError> {
                if g.p() > p {
                    return Err(UsageError(format!(
                        "--p {} is smaller than a node index in the input",
                        p
                    )));
                }
                Ok(graph::DagGraph::from_edges(p, &g.edges()))
            };
            (lift(&est)?, lift(&truth)?)
        }
        None => {
            // Edge lists only record nodes that touch an edge; pad the
            // smaller graph so trailing isolated nodes don't fail evaluation.
            let p = est.p().max(truth.p());
            (
                graph::DagGraph::from_edges(p, &est.edges()),
                graph::DagGraph::from_edges(p, &truth.edges()),
            )
        }
    };
    let report = evaluate(&est, &truth)
        .context("evaluation failed")
        .map_err(Flow::Runtime)?;
    let text = format!("{CSV_HEADER}\n{}\n", report.to_csv_row());
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(Flow::Runtime)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| UsageError(format!("malformed config file: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.graph_type {
        cfg.graph_type = v;
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    a.hyper.merge_into(&mut cfg.hyper);
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.max_parents {
        cfg.max_parents = v;
    }
    if a.mode.is_some() {
        cfg.mode = a.mode;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let mode = cfg
        .mode
        .ok_or_else(|| UsageError("no mode given (flag --mode or config field)".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| UsageError("no output directory (flag --out or config field)".into()))?;
    cfg.validate().map_err(UsageError)?;
    let t0 = std::time::Instant::now();
    let outcome = runner::run_experiment(&cfg, mode, &out)?;
    eprintln!("total wall time {:.2}s", t0.elapsed().as_secs_f64());
    println!(
        "{} settings x {} replicates -> {} (hash {})",
        outcome.settings,
        outcome.replicates,
        out.display(),
        &outcome.content_hash[..16]
    );
    Ok(())
}
