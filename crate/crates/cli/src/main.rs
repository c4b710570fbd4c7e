use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use pmbm_cli::{
    execute, exit_code_for, load_scenario, write_outputs, Manifest, MetricParamsConfig, ModeArg,
    RunOptions,
};
use pmbm_core::metrics::{trajectory_metric_series, write_metric_csv};
use pmbm_core::sim::{generate_scans, generate_truth, write_scans};
use pmbm_core::trajectory::{read_trajectories, write_trajectories};

/// Extended-target PMBM trackers over sets of trajectories.
#[derive(Parser)]
#[command(name = "pmbm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tracker over simulated scans with Monte Carlo repetitions.
    Run(RunArgs),
    /// Rerun a previous batch from its manifest.
    Rerun(RerunArgs),
    /// Generate ground truth and scans without tracking.
    Simulate(SimulateArgs),
    /// Evaluate the trajectory metric between two trajectory-set files.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or a built-in name ('desk', 'paper').
    #[arg(long, env = "PMBM_SCENARIO")]
    scenario: String,
    /// Tracker mode: 'current' or 'all' trajectories.
    #[arg(long, env = "PMBM_MODE", default_value = "all")]
    mode: ModeArg,
    /// Monte Carlo repetitions.
    #[arg(long, env = "PMBM_RUNS", default_value_t = 1)]
    runs: usize,
    /// Master seed; per-run seeds derive from it.
    #[arg(long, env = "PMBM_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "PMBM_OUT")]
    out: PathBuf,
    /// Gating probability (1 disables gating).
    #[arg(long = "gate-prob", env = "PMBM_GATE_PROB", default_value_t = 0.999)]
    gate_prob: f64,
    /// Gibbs sweeps per global hypothesis.
    #[arg(long, env = "PMBM_SAMPLES", default_value_t = 25)]
    samples: usize,
    /// Ranked assignments per global hypothesis.
    #[arg(long, env = "PMBM_KBEST", default_value_t = 5)]
    kbest: usize,
    /// Single-linkage distance (defaults to four prior extent axes).
    #[arg(long = "link-distance", env = "PMBM_LINK_DISTANCE")]
    link_distance: Option<f64>,
    /// Global hypothesis pruning threshold.
    #[arg(
        long = "prune-global",
        env = "PMBM_PRUNE_GLOBAL",
        default_value_t = 0.01
    )]
    prune_global: f64,
    /// Bernoulli existence pruning threshold.
    #[arg(long = "prune-r", env = "PMBM_PRUNE_R", default_value_t = 1e-3)]
    prune_r: f64,
    /// Poisson component pruning threshold.
    #[arg(
        long = "prune-poisson",
        env = "PMBM_PRUNE_POISSON",
        default_value_t = 1e-3
    )]
    prune_poisson: f64,
    /// Worker threads (0 uses every core).
    #[arg(long, env = "PMBM_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest of a previous run.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, env = "PMBM_SCENARIO")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated trajectory-set file.
    #[arg(long)]
    estimates: PathBuf,
    /// Ground-truth trajectory-set file.
    #[arg(long)]
    truth: PathBuf,
    /// Evaluation horizon (defaults to the latest end step).
    #[arg(long)]
    horizon: Option<u32>,
    /// Location/extent cutoff.
    #[arg(long, default_value_t = 20.0)]
    cutoff: f64,
    /// Metric order.
    #[arg(long, default_value_t = 1.0)]
    order: f64,
    /// Track switch cost.
    #[arg(long = "switch-cost", default_value_t = 4.0)]
    switch_cost: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads(threads: usize) -> anyhow::Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    configure_threads(args.threads)?;
    let scenario = load_scenario(&args.scenario)?;
    let opts = RunOptions {
        mode: args.mode,
        runs: args.runs,
        seed: args.seed.unwrap_or(scenario.seed),
        gate_prob: args.gate_prob,
        samples: args.samples,
        kbest: args.kbest,
        link_distance: args.link_distance,
        prune_global: args.prune_global,
        prune_r: args.prune_r,
        prune_poisson: args.prune_poisson,
        metric: MetricParamsConfig::default(),
    };
    let output = execute(&scenario, &opts)?;
    write_outputs(&args.out, &scenario, &opts, &output)?;
    eprintln!(
        "{} runs of '{}' in {:.2}s -> {}",
        opts.runs,
        scenario.name,
        output.wall_seconds,
        args.out.display()
    );
    Ok(())
}

fn rerun(args: RerunArgs) -> anyhow::Result<()> {
    configure_threads(args.threads)?;
    let mut text = String::new();
    std::fs::File::open(&args.manifest)
        .with_context(|| format!("opening {}", args.manifest.display()))?
        .read_to_string(&mut text)?;
    let manifest: Manifest = serde_json::from_str(&text).context("parsing manifest")?;
    let output = execute(&manifest.scenario, &manifest.options)?;
    write_outputs(&args.out, &manifest.scenario, &manifest.options, &output)?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let truth = generate_truth(&scenario, seed);
    let scans = generate_scans(&truth, &scenario, seed);
    std::fs::create_dir_all(&args.out)?;

    let mut buf = Vec::new();
    write_trajectories(&mut buf, &truth.records())?;
    std::fs::write(args.out.join("truth.txt"), buf)?;

    let mut buf = Vec::new();
    write_scans(&mut buf, &scans)?;
    std::fs::write(args.out.join("scans.csv"), buf)?;
    eprintln!(
        "{} targets, {} scans -> {}",
        truth.targets.len(),
        scans.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let estimates = read_trajectories(std::io::BufReader::new(
        std::fs::File::open(&args.estimates)
            .with_context(|| format!("opening {}", args.estimates.display()))?,
    ))?;
    let truth = read_trajectories(std::io::BufReader::new(
        std::fs::File::open(&args.truth)
            .with_context(|| format!("opening {}", args.truth.display()))?,
    ))?;
    let horizon = args.horizon.unwrap_or_else(|| {
        estimates
            .iter()
            .chain(truth.iter())
            .map(|r| r.end())
            .max()
            .unwrap_or(1)
    });
    let params = pmbm_core::metrics::MetricParams {
        cutoff: args.cutoff,
        order: args.order,
        switch_cost: args.switch_cost,
    };
    let series = trajectory_metric_series(&estimates, &truth, &params, horizon);
    match args.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_metric_csv(&mut buf, &series)?;
            std::fs::write(path, buf)?;
        }
        None => write_metric_csv(&mut std::io::stdout().lock(), &series)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Rerun(args) => rerun(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
