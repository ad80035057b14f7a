//! Command-line frontend for ARZ twin experiments: loads a JSON scenario,
//! runs the simulator, an estimator or a sweep, and writes CSV/JSON.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 for I/O errors on the outputs.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use arz_core::estimators::EstimatorKind;
use arz_core::scenario::output::{
    write_sweep_csv, write_trajectory_csv, write_trajectory_json, RunSummary,
};
use arz_core::scenario::sweep::{run_sweep, SweepKind};
use arz_core::scenario::{generate_truth, run_with_truth, ScenarioError};
use arz_core::sensing::PD_THRESHOLD;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{load_config, parse_config, LoadedConfig, ScenarioFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        if e.is_numerical() {
            Self::Numerical(e.to_string())
        } else {
            Self::Config(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "arz-tse", version, about = "ARZ traffic twin experiments and state estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the ground truth and write its trajectory.
    Simulate(SimulateArgs),
    /// Run one estimator against the twin data.
    Estimate(EstimateArgs),
    /// Run a parameter sweep and write the averaged table.
    Sweep(SweepArgs),
    /// Report observability of the fixed sensor set.
    Gramian(GramianArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trajectory CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump the trajectory as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ekf,
    Ukf,
    Enkf,
    Mhe,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ekf => Self::Ekf,
            EstimatorArg::Ukf => Self::Ukf,
            EstimatorArg::Enkf => Self::Enkf,
            EstimatorArg::Mhe => Self::Mhe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Sensors,
    Rotation,
    Spacing,
    Noise,
}

impl From<SweepArg> for SweepKind {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Sensors => Self::Sensors,
            SweepArg::Rotation => Self::Rotation,
            SweepArg::Spacing => Self::Spacing,
            SweepArg::Noise => Self::Noise,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the first estimator of the config.
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Estimate CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON; defaults to `<out stem>.summary.json` next to `--out`,
    /// or stderr without `--out`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Overrides the first configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trailing moving-average window applied to the estimates.
    #[arg(long, value_name = "WINDOW")]
    pub smooth: Option<usize>,
    /// Also dump the estimates as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Leave wall-clock timings out of the summary.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Sweep CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the configured seed list by this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave the step-time column empty so the table is reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct GramianArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `bytes` to `path`, or to stdout when `path` is `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Gramian(a) => gramian(&a, &mut std::io::stdout()),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let sc = &cfg.scenario;
    let truth = generate_truth(sc)?;
    let states = &truth.states[1..];
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &sc.model, states, 1).map_err(|e| CliError::Io(e.to_string()))?;
    let json = match &a.json {
        Some(_) => {
            let mut buf = Vec::new();
            write_trajectory_json(&mut buf, &sc.model, states, 1).map_err(|e| CliError::Io(e.to_string()))?;
            Some(buf)
        }
        None => None,
    };
    emit(a.out.as_deref(), &csv)?;
    if let (Some(p), Some(buf)) = (&a.json, json) {
        emit(Some(p), &buf)?;
    }
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let sc = &cfg.scenario;
    let kind: EstimatorKind = match a.estimator {
        Some(e) => e.into(),
        None => sc.estimators[0],
    };
    let seed = a.seed.unwrap_or(sc.seeds[0]);
    if a.smooth == Some(0) {
        return Err(CliError::Config("--smooth window must be at least 1".into()));
    }
    let truth = generate_truth(sc)?;
    let mut run = run_with_truth(sc, &truth, kind, seed)?;
    if let Some(w) = a.smooth {
        run.smooth(sc.model.params(), w);
    }
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &sc.model, &run.estimates, 1).map_err(|e| CliError::Io(e.to_string()))?;
    let summary = RunSummary::of(&run, a.smooth, !a.no_timing);
    let mut summary_json =
        serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    summary_json.push(b'\n');

    emit(a.out.as_deref(), &csv)?;
    if let Some(p) = &a.json {
        let mut buf = Vec::new();
        write_trajectory_json(&mut buf, &sc.model, &run.estimates, 1).map_err(|e| CliError::Io(e.to_string()))?;
        emit(Some(p), &buf)?;
    }
    let summary_path = a
        .summary
        .clone()
        .or_else(|| a.out.as_ref().map(|o| summary_path_for(o)));
    match summary_path {
        Some(p) => emit(Some(&p), &summary_json)?,
        None => std::io::stderr()
            .write_all(&summary_json)
            .map_err(|e| CliError::Io(format!("stderr: {e}")))?,
    }
    Ok(())
}

/// `dir/name.csv` -> `dir/name.summary.json`.
pub fn summary_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
    out.with_file_name(format!("{stem}.summary.json"))
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let mut sc = cfg.scenario.clone();
    if let Some(s) = a.seed {
        sc.seeds = vec![s];
    }
    if a.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let rows = run_sweep(&sc, a.sweep.into(), &cfg.plan, a.jobs)?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &cfg.name, &rows, cfg.dt_s, !a.no_timing).map_err(|e| CliError::Io(e.to_string()))?;
    emit(a.out.as_deref(), &csv)
}

pub fn gramian<W: Write>(a: &GramianArgs, out: &mut W) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let sc = &cfg.scenario;
    let report = sc.fixed_sensor_gramian()?;
    let ids: Vec<String> = sc.sensors.fixed().iter().map(|s| s.to_string()).collect();
    let verdict = if report.observable() { "observable" } else { "not observable" };
    let text = format!(
        "fixed sensors: {}\nmin eigenvalue: {:e}\nthreshold: {:e}\nspectral radius estimate: {}\nseries diverged: {}\nverdict: {verdict}\n",
        if ids.is_empty() { "(none)".to_string() } else { ids.join(" ") },
        report.min_eigenvalue,
        PD_THRESHOLD,
        report.spectral_radius,
        report.diverged,
    );
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}
