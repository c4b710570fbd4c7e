//! Batch pipeline: load a scenario, run one of the two PMBM trackers over
//! simulated scans for a number of Monte Carlo repetitions, evaluate the
//! trajectory metric at every step and emit result files.
//!
//! Runs are parallelized with deterministic per-run seeds, so outputs are
//! byte-identical across repetitions and worker counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pmbm_core::metrics::{trajectory_metric, MetricParams, MetricResult};
use pmbm_core::numeric::split_seed;
use pmbm_core::pmbm::{
    estimate, predict_all, predict_current, update, AssociationEngine, PmbmPosterior,
    ReductionConfig, TrackerMode, UpdateConfig,
};
use pmbm_core::sim::{generate_scans, generate_truth, Scan, ScenarioConfig};
use pmbm_core::trajectory::{write_trajectories, TrajectoryRecord};
use pmbm_core::Error;

/// Tracker selection for the batch run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Current,
    All,
}

impl ModeArg {
    pub fn tracker_mode(&self) -> TrackerMode {
        match self {
            ModeArg::Current => TrackerMode::CurrentTrajectories,
            ModeArg::All => TrackerMode::AllTrajectories,
        }
    }
}

impl std::str::FromStr for ModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "current" => Ok(ModeArg::Current),
            "all" => Ok(ModeArg::All),
            other => Err(format!(
                "unknown mode '{other}' (expected 'current' or 'all')"
            )),
        }
    }
}

/// Options of one batch run; together with the scenario they fully determine
/// the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: ModeArg,
    pub runs: usize,
    pub seed: u64,
    pub gate_prob: f64,
    /// Gibbs sweeps per global hypothesis.
    pub samples: usize,
    /// Ranked assignments per global hypothesis.
    pub kbest: usize,
    /// Single-linkage distance; `None` derives four times the prior extent
    /// axis from the scenario.
    pub link_distance: Option<f64>,
    pub prune_global: f64,
    pub prune_r: f64,
    pub prune_poisson: f64,
    pub metric: MetricParamsConfig,
}

/// Serializable mirror of the metric parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricParamsConfig {
    pub cutoff: f64,
    pub order: f64,
    pub switch_cost: f64,
}

impl Default for MetricParamsConfig {
    fn default() -> Self {
        let p = MetricParams::default();
        MetricParamsConfig {
            cutoff: p.cutoff,
            order: p.order,
            switch_cost: p.switch_cost,
        }
    }
}

impl MetricParamsConfig {
    pub fn params(&self) -> MetricParams {
        MetricParams {
            cutoff: self.cutoff,
            order: self.order,
            switch_cost: self.switch_cost,
        }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: ModeArg::All,
            runs: 1,
            seed: 1,
            gate_prob: 0.999,
            samples: 25,
            kbest: 5,
            link_distance: None,
            prune_global: 0.01,
            prune_r: 1e-3,
            prune_poisson: 1e-3,
            metric: MetricParamsConfig::default(),
        }
    }
}

impl RunOptions {
    fn effective_link_distance(&self, scenario: &ScenarioConfig) -> f64 {
        self.link_distance
            .unwrap_or(4.0 * scenario.extent_prior_axis)
    }

    fn update_config(&self, scenario: &ScenarioConfig, seed: u64) -> UpdateConfig {
        UpdateConfig {
            gate_prob: self.gate_prob,
            link_distance: self.effective_link_distance(scenario),
            engine: AssociationEngine::Reduced {
                sweeps: self.samples,
                kbest: self.kbest,
            },
            seed,
            reduction: ReductionConfig {
                global_prune: self.prune_global,
                existence_prune: self.prune_r,
                poisson_prune: self.prune_poisson,
            },
        }
    }
}

/// Result of one Monte Carlo run.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub truth: Vec<TrajectoryRecord>,
    pub estimates: Vec<TrajectoryRecord>,
    /// Metric of the estimates extracted at each step, horizon-normalized.
    pub metric_series: Vec<MetricResult>,
}

/// Full batch output.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub per_run: Vec<SingleRun>,
    /// Per-step metric columns averaged over the runs.
    pub mean_series: Vec<MetricResult>,
    pub wall_seconds: f64,
}

/// Tracks one run over pre-generated scans, returning the per-step estimate
/// sets.
pub fn track_scans(
    scenario: &ScenarioConfig,
    scans: &[Scan],
    mode: TrackerMode,
    opts: &RunOptions,
    seed: u64,
) -> anyhow::Result<Vec<Vec<TrajectoryRecord>>> {
    let motion = scenario.motion_model();
    let sensor = scenario.sensor_model();
    let birth = scenario.birth_model();
    let cfg = opts.update_config(scenario, seed);

    let mut posterior = PmbmPosterior::new(mode);
    let mut per_step = Vec::with_capacity(scans.len());
    for scan in scans {
        posterior = match mode {
            TrackerMode::CurrentTrajectories => predict_current(&posterior, &motion, &birth)?,
            TrackerMode::AllTrajectories => predict_all(&posterior, &motion, &birth)?,
        };
        posterior = update(&posterior, &scan.points, &sensor, &cfg)?;
        per_step.push(estimate(&posterior));
    }
    Ok(per_step)
}

fn single_run(
    scenario: &ScenarioConfig,
    opts: &RunOptions,
    run_seed: u64,
) -> anyhow::Result<SingleRun> {
    let truth = generate_truth(scenario, run_seed);
    let scans = generate_scans(&truth, scenario, run_seed);
    let per_step = track_scans(scenario, &scans, opts.mode.tracker_mode(), opts, run_seed)?;

    let truth_records = truth.records();
    let params = opts.metric.params();
    let metric_series: Vec<MetricResult> = per_step
        .iter()
        .enumerate()
        .map(|(i, est)| trajectory_metric(est, &truth_records, &params, i as u32 + 1))
        .collect();
    let estimates = per_step.into_iter().last().unwrap_or_default();
    Ok(SingleRun {
        truth: truth_records,
        estimates,
        metric_series,
    })
}

/// Runs the batch: Monte Carlo repetitions in parallel with per-run seeds
/// derived from the master seed, aggregated order-independently.
pub fn execute(scenario: &ScenarioConfig, opts: &RunOptions) -> anyhow::Result<RunOutput> {
    if opts.runs == 0 {
        bail!("need at least one Monte Carlo run");
    }
    for (name, value) in [
        ("--prune-global", opts.prune_global),
        ("--prune-r", opts.prune_r),
        ("--prune-poisson", opts.prune_poisson),
    ] {
        if !(0.0..1.0).contains(&value) {
            bail!("{name} must lie in [0, 1), got {value}");
        }
    }
    if !(0.0..=1.0).contains(&opts.gate_prob) {
        bail!("--gate-prob must lie in [0, 1], got {}", opts.gate_prob);
    }
    let started = Instant::now();
    let per_run: Vec<anyhow::Result<SingleRun>> = (0..opts.runs)
        .into_par_iter()
        .map(|idx| single_run(scenario, opts, split_seed(opts.seed, idx as u64)))
        .collect();
    let mut runs = Vec::with_capacity(per_run.len());
    for r in per_run {
        runs.push(r?);
    }

    let horizon = scenario.horizon as usize;
    let mut mean_series = vec![MetricResult::default(); horizon];
    for run in &runs {
        for (k, m) in run.metric_series.iter().enumerate() {
            mean_series[k].total += m.total;
            mean_series[k].localization += m.localization;
            mean_series[k].missed += m.missed;
            mean_series[k].false_detection += m.false_detection;
            mean_series[k].track_switch += m.track_switch;
        }
    }
    let n = runs.len() as f64;
    for m in &mut mean_series {
        m.total /= n;
        m.localization /= n;
        m.missed /= n;
        m.false_detection /= n;
        m.track_switch /= n;
    }

    Ok(RunOutput {
        per_run: runs,
        mean_series,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Run manifest: everything needed to reproduce the outputs, plus timing.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: ScenarioConfig,
    pub options: RunOptions,
    pub wall_seconds: f64,
}

pub fn render_metrics_csv(series: &[MetricResult]) -> String {
    let mut out = String::from("k,total,localization,missed,false,switch\n");
    for (i, m) in series.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            m.total,
            m.localization,
            m.missed,
            m.false_detection,
            m.track_switch
        )
        .expect("string write");
    }
    out
}

/// Writes metrics CSV, per-run estimate files and the manifest into the
/// output directory.
pub fn write_outputs(
    dir: &Path,
    scenario: &ScenarioConfig,
    opts: &RunOptions,
    output: &RunOutput,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    std::fs::write(
        dir.join("metrics.csv"),
        render_metrics_csv(&output.mean_series),
    )?;

    let est_dir = dir.join("estimates");
    std::fs::create_dir_all(&est_dir)?;
    for (idx, run) in output.per_run.iter().enumerate() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &run.estimates)?;
        std::fs::write(est_dir.join(format!("run_{idx:03}.txt")), buf)?;
    }

    let manifest = Manifest {
        scenario: scenario.clone(),
        options: opts.clone(),
        wall_seconds: output.wall_seconds,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Resolves a scenario argument: a file path, or one of the built-in names.
pub fn load_scenario(arg: &str) -> anyhow::Result<ScenarioConfig> {
    match arg {
        "desk" => Ok(ScenarioConfig::desk()),
        "paper" => Ok(ScenarioConfig::paper()),
        path => {
            let p = PathBuf::from(path);
            ScenarioConfig::load(&p)
                .with_context(|| format!("loading scenario from {}", p.display()))
        }
    }
}

/// Exit code for an error: reduction emptying the posterior gets its own
/// code so batch callers can distinguish over-aggressive pruning.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(Error::EmptyPosterior) = cause.downcast_ref::<Error>() {
            return 3;
        }
    }
    1
}
