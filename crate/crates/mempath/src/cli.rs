//! Command-line interface.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mempath_core::graph::GeneratorOptions;
use mempath_core::protocols::sweep_optimal_voltage;
use mempath_core::solver::StopReason;
use mempath_core::{
    bfs_oracle, generate_grid_with, generate_small_world_with, Circuit, DeviceModel, Graph, PathOracle, SolverConfig,
};
use serde::Serialize;

use crate::batch::{instance_devices, run_batch_with, simulate, worker_count, BatchPlan, RecordWriter};
use crate::config::{ExperimentConfig, Protocol, ProtocolSpec, SolverOverrides};
use crate::error::{Error, Result};
use crate::files::{load_graph, save_graph, save_result, save_trace, write_text, RunResult};
use crate::summary::{delta_g_histogram, histogram_to_csv, summarize_scaling};

#[derive(Debug, Parser)]
#[command(
    name = "mempath",
    version,
    about = "Shortest paths from the dynamics of memristor circuits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a problem graph with a unique shortest path.
    Generate {
        #[command(subcommand)]
        family: Family,
    },
    /// Run one protocol on a graph file and write the result.
    Solve(SolveArgs),
    /// Constant-voltage runs over a voltage grid; reports the voltage with the
    /// largest ΔG.
    SweepVoltage(SweepArgs),
    /// Run a batch experiment described by a TOML config.
    Batch(BatchArgs),
    /// Scaling correlations and a ΔG histogram from a records CSV.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Subcommand)]
pub enum Family {
    /// Square grid with randomly removed edges.
    Grid {
        #[arg(long)]
        rows: u32,
        #[arg(long)]
        cols: u32,
        /// Probability of removing each grid edge.
        #[arg(long, default_value_t = 0.3)]
        removal_prob: f64,
        #[command(flatten)]
        common: GenerateCommon,
    },
    /// Watts–Strogatz small-world network.
    SmallWorld {
        /// Node count.
        #[arg(long)]
        n: u32,
        /// Ring-lattice degree (even).
        #[arg(long, default_value_t = 4)]
        k: u32,
        /// Rewiring probability.
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        #[command(flatten)]
        common: GenerateCommon,
    },
}

#[derive(Debug, Args)]
pub struct GenerateCommon {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output graph file.
    #[arg(long)]
    out: PathBuf,
    /// Reject instances whose shortest path is shorter.
    #[arg(long)]
    min_path_len: Option<usize>,
    /// Reject instances whose shortest path is longer.
    #[arg(long)]
    max_path_len: Option<usize>,
    /// Rejection-sampling attempts before giving up.
    #[arg(long, default_value_t = GeneratorOptions::default().max_attempts)]
    max_attempts: u32,
}

impl GenerateCommon {
    fn options(&self) -> GeneratorOptions {
        let d = GeneratorOptions::default();
        GeneratorOptions {
            max_attempts: self.max_attempts,
            min_path_len: self.min_path_len.unwrap_or(d.min_path_len),
            max_path_len: self.max_path_len.unwrap_or(d.max_path_len),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Linear,
    Chang,
}

impl ModelKind {
    fn model(self) -> DeviceModel {
        match self {
            ModelKind::Linear => DeviceModel::linear(),
            ModelKind::Chang => DeviceModel::chang(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolKind {
    Ramp,
    Constant,
}

#[derive(Debug, Args)]
pub struct DeviceArgs {
    /// Device law.
    #[arg(long, value_enum, default_value_t = ModelKind::Linear)]
    model: ModelKind,
    /// Relative standard deviation of every device parameter.
    #[arg(long, default_value_t = 0.0)]
    sigma_rel: f64,
    /// Seed for the parameter variability.
    #[arg(long, default_value_t = 0)]
    device_seed: u64,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long, value_enum, default_value_t = ProtocolKind::Ramp)]
    protocol: ProtocolKind,
    /// Control voltage of the constant protocol (V).
    #[arg(long)]
    v_ctrl: Option<f64>,
    /// Ramp start voltage (V). Default: model dependent.
    #[arg(long)]
    v0: Option<f64>,
    /// Ramp slope (V/s). Default: model dependent.
    #[arg(long)]
    rate: Option<f64>,
    /// Detector moving-average window (odd sample count).
    #[arg(long)]
    window: Option<usize>,
    /// Detector trigger level on the normalized second derivative (s⁻², negative).
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Detector warm-up (s).
    #[arg(long)]
    warmup: Option<f64>,
    /// Simulated time budget (s).
    #[arg(long)]
    t_max: Option<f64>,
}

impl ProtocolArgs {
    fn spec(&self) -> Result<ProtocolSpec> {
        Ok(match self.protocol {
            ProtocolKind::Ramp => ProtocolSpec::Ramp {
                v0: self.v0,
                rate: self.rate,
                window: self.window,
                threshold: self.threshold,
                warmup: self.warmup,
                t_max: self.t_max,
            },
            ProtocolKind::Constant => ProtocolSpec::Constant {
                v_ctrl: self
                    .v_ctrl
                    .ok_or_else(|| Error::Config("--protocol constant needs --v-ctrl".into()))?,
                t_max: self.t_max,
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Input graph file.
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    devices: DeviceArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Output result file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the sampled source current as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Input graph file.
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    devices: DeviceArgs,
    /// Lowest control voltage (V).
    #[arg(long)]
    v_min: f64,
    /// Highest control voltage (V).
    #[arg(long)]
    v_max: f64,
    /// Voltage spacing (V).
    #[arg(long)]
    v_step: f64,
    /// Simulated time budget per voltage (s). Default: model dependent.
    #[arg(long)]
    t_max: Option<f64>,
    /// Output file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Records CSV; overrides the config.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Histogram CSV of normalized ΔG; overrides the config.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Scaling summary (JSON); overrides the config.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads. Default: MEMPATH_WORKERS, else all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Records CSV written by `batch`.
    #[arg(long)]
    records: PathBuf,
    /// Scaling summary (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram CSV of normalized ΔG.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { family } => generate(family),
        Command::Solve(a) => solve(a),
        Command::SweepVoltage(a) => sweep(a),
        Command::Batch(a) => batch(a),
        Command::Summarize(a) => summarize(a),
    }
}

/// Parses `args`, runs the command and maps errors to exit codes.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn generate(family: Family) -> Result<()> {
    let (g, out) = match family {
        Family::Grid {
            rows,
            cols,
            removal_prob,
            common,
        } => (
            generate_grid_with(rows, cols, removal_prob, common.seed, &common.options()),
            common.out,
        ),
        Family::SmallWorld { n, k, beta, common } => (
            generate_small_world_with(n, k, beta, common.seed, &common.options()),
            common.out,
        ),
    };
    let g = g?;
    save_graph(&g, &out)?;
    let o = bfs_oracle(&g)?;
    eprintln!(
        "{}: {} nodes, {} edges, shortest path length {}",
        out.display(),
        g.node_count(),
        g.edge_count(),
        o.length
    );
    Ok(())
}

fn load_instance(path: &Path) -> Result<(Graph, PathOracle)> {
    let g = load_graph(path)?;
    let o = bfs_oracle(&g)?;
    if !o.unique {
        return Err(Error::Config(format!(
            "{}: the shortest path is not unique, so ΔG is undefined",
            path.display()
        )));
    }
    Ok((g, o))
}

fn solver_for(model: &DeviceModel) -> Result<SolverConfig> {
    SolverOverrides::default().resolve(model)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config("--sigma-rel must be a finite non-negative number".into()))
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    check_sigma(a.devices.sigma_rel)?;
    let (g, oracle) = load_instance(&a.graph)?;
    let model = a.devices.model.model();
    let solver = solver_for(&model)?;
    let protocol = a.protocol.spec()?.resolve(&model, &solver)?;
    let devices = instance_devices(model, a.devices.sigma_rel, a.devices.device_seed, g.edge_count());
    let sim = simulate(&g, &oracle, devices, &protocol, &solver)?;
    if let Some(p) = &a.trace {
        save_trace(&sim.trace, p)?;
    }
    let result = RunResult {
        read_path: sim.metrics.read_path.clone(),
        delta_g: sim.metrics.delta_g,
        delta_g_max: sim.metrics.delta_g_max,
        normalized: sim.metrics.normalized,
        success: sim.metrics.success && !sim.detection_failed,
        detection_time_s: sim.detection_time,
        energy_j: sim.state.energy,
    };
    match &a.out {
        Some(p) => save_result(&result, p)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("results always serialize")
        ),
    }
    if sim.detection_failed {
        let t_max = match protocol {
            Protocol::Ramp(r) => r.t_max,
            Protocol::Constant { t_max, .. } => t_max,
        };
        return Err(Error::Detection { t_max });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepReport {
    path_len: usize,
    v_opt: f64,
    curve: Vec<SweepRow>,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    v_ctrl: f64,
    delta_g: f64,
    normalized: f64,
    success: bool,
    settled: bool,
}

/// `v_min, v_min + v_step, …` up to `v_max` inclusive.
pub fn voltage_grid(v_min: f64, v_max: f64, v_step: f64) -> Result<Vec<f64>> {
    if !(v_step > 0.0 && v_min.is_finite() && v_max >= v_min) {
        return Err(Error::Config("voltage grid needs v_step > 0 and v_max >= v_min".into()));
    }
    let n = ((v_max - v_min) / v_step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| v_min + k as f64 * v_step).collect())
}

fn sweep(a: SweepArgs) -> Result<()> {
    check_sigma(a.devices.sigma_rel)?;
    let grid = voltage_grid(a.v_min, a.v_max, a.v_step)?;
    let (g, oracle) = load_instance(&a.graph)?;
    let model = a.devices.model.model();
    let solver = solver_for(&model)?;
    let t_max = match (ProtocolSpec::Constant {
        v_ctrl: grid[0],
        t_max: a.t_max,
    })
    .resolve(&model, &solver)?
    {
        Protocol::Constant { t_max, .. } => t_max,
        Protocol::Ramp(_) => unreachable!(),
    };
    let devices = instance_devices(model, a.devices.sigma_rel, a.devices.device_seed, g.edge_count());
    let mut circuit = Circuit::new(&g, devices)?;
    let s = sweep_optimal_voltage(&g, &mut circuit, &oracle, &grid, &solver, t_max)?;
    let report = SweepReport {
        path_len: oracle.length,
        v_opt: s.v_opt,
        curve: s
            .curve
            .iter()
            .map(|p| SweepRow {
                v_ctrl: p.v_ctrl,
                delta_g: p.metrics.delta_g,
                normalized: p.metrics.normalized,
                success: p.metrics.success,
                settled: p.reason == StopReason::Stopped,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("reports always serialize");
    text.push('\n');
    emit(&text, a.out.as_deref())
}

fn batch(a: BatchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if a.records.is_some() {
        cfg.output.records = a.records;
    }
    if a.histogram.is_some() {
        cfg.output.histogram = a.histogram;
    }
    if a.summary.is_some() {
        cfg.output.summary = a.summary;
    }
    if a.workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let plan = BatchPlan::new(cfg)?;
    let out = &plan.config.output;
    let mut writer = match &out.records {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            Some((
                p.clone(),
                RecordWriter::new(BufWriter::new(f)).map_err(|e| Error::io(p, e))?,
            ))
        }
        None => None,
    };
    let workers = a.workers.unwrap_or_else(worker_count);
    let records = run_batch_with(&plan, workers, |r| {
        if let Some((p, w)) = writer.as_mut() {
            w.write(r).map_err(|e| Error::io(p.as_path(), e))?;
        }
        Ok(())
    })?;
    let ok = records.iter().filter(|r| r.success).count();
    eprintln!("{ok}/{} runs with ΔG > 0", records.len());
    if let Some(p) = &out.histogram {
        write_text(p, &histogram_to_csv(&delta_g_histogram(&records, out.bins)))?;
    }
    if let Some(p) = &out.summary {
        let s = summarize_scaling(&records)?;
        write_text(
            p,
            &(serde_json::to_string_pretty(&s).expect("summaries always serialize") + "\n"),
        )?;
    }
    Ok(())
}

fn summarize(a: SummarizeArgs) -> Result<()> {
    if a.bins == 0 {
        return Err(Error::Config("--bins must be at least 1".into()));
    }
    let text = crate::files::read_text(&a.records)?;
    let records = crate::batch::parse_records_csv(&text, &a.records)?;
    if let Some(p) = &a.histogram {
        write_text(p, &histogram_to_csv(&delta_g_histogram(&records, a.bins)))?;
    }
    let s = summarize_scaling(&records)?;
    emit(
        &(serde_json::to_string_pretty(&s).expect("summaries always serialize") + "\n"),
        a.out.as_deref(),
    )
}
