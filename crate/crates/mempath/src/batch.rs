//! Batch experiments: deterministic instance generation, one protocol run
//! per instance, and the records CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use mempath_core::protocols::{run_constant, run_ramp};
use mempath_core::solver::{CircuitState, CurrentTrace, Diagnostics};
use mempath_core::{
    bfs_oracle, compute_delta_g, generate_grid_with, generate_small_world_with, mix_seed, Circuit, DeviceModel,
    Devices, Graph, GraphError, PathMetrics, PathOracle, SolverConfig, SolverError,
};

use crate::config::{ExperimentConfig, Protocol, TopologySpec};
use crate::error::{Error, Position, Result};
use crate::files::fmt_f64;

pub const RECORDS_HEADER: &str = "graph_id,topology,nodes,edges,size,path_len,delta_g,delta_g_norm,success,detect_time_s,energy_J,model,sigma_rel,seed,failure_kind";

/// Environment variable overriding the number of batch workers.
pub const WORKERS_ENV: &str = "MEMPATH_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Generation,
    Detection,
    Solver,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Generation => "generation-failed",
            FailureKind::Detection => "detection-failure",
            FailureKind::Solver => "solver-error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [FailureKind::Generation, FailureKind::Detection, FailureKind::Solver]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// One row of the records CSV. Graph and metric fields are `None` when the
/// run failed before they could be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub graph_id: u64,
    pub topology: String,
    pub nodes: Option<usize>,
    pub edges: Option<usize>,
    pub path_len: Option<usize>,
    pub delta_g: Option<f64>,
    pub delta_g_norm: Option<f64>,
    pub success: bool,
    pub detect_time_s: Option<f64>,
    pub energy_j: Option<f64>,
    pub model: String,
    pub sigma_rel: f64,
    pub seed: u64,
    pub failure_kind: Option<FailureKind>,
    /// Whether the greedy readout reproduced the oracle path. Not written
    /// to the CSV.
    pub oracle_match: Option<bool>,
    /// Not written to the CSV.
    pub diagnostics: Option<Diagnostics>,
}

impl RunRecord {
    /// Nodes plus edges.
    pub fn size(&self) -> Option<usize> {
        Some(self.nodes? + self.edges?)
    }

    pub fn csv_fields(&self) -> [String; 15] {
        let opt_u = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let opt_f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        [
            self.graph_id.to_string(),
            self.topology.clone(),
            opt_u(self.nodes),
            opt_u(self.edges),
            opt_u(self.size()),
            opt_u(self.path_len),
            opt_f(self.delta_g),
            opt_f(self.delta_g_norm),
            self.success.to_string(),
            opt_f(self.detect_time_s),
            opt_f(self.energy_j),
            self.model.clone(),
            fmt_f64(self.sigma_rel),
            self.seed.to_string(),
            self.failure_kind.map(|k| k.as_str().to_string()).unwrap_or_default(),
        ]
    }
}

/// Streams records as CSV, flushing after every row.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> std::io::Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(RECORDS_HEADER.split(','))?;
        inner.flush()?;
        Ok(RecordWriter { inner })
    }

    pub fn write(&mut self, r: &RunRecord) -> std::io::Result<()> {
        self.inner.write_record(r.csv_fields())?;
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
            .into_inner()
            .unwrap_or_else(|_| unreachable!("flushed after every row"))
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut w = RecordWriter::new(Vec::new()).expect("in-memory write");
    for r in records {
        w.write(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner()).expect("CSV output is UTF-8")
}

/// Parses a records CSV written by [`RecordWriter`].
pub fn parse_records_csv(text: &str, origin: &Path) -> Result<Vec<RunRecord>> {
    let bad = |line: usize, message: String| Error::Malformed {
        path: origin.to_path_buf(),
        position: Some(Position { line, column: 1 }),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    match rows.next() {
        Some(Ok(h)) if h.iter().eq(RECORDS_HEADER.split(',')) => {}
        _ => return Err(bad(1, format!("expected header `{RECORDS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (k, row) in rows.enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        if row.len() != 15 {
            return Err(bad(line, format!("expected 15 fields, found {}", row.len())));
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let err = |i: usize| bad(line, format!("bad value `{}` in column {}", field(i), i + 1));
        let opt_u = |i: usize| -> Result<Option<usize>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err(i))
            }
        };
        let opt_f = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err(i))
            }
        };
        let failure_kind = match field(14) {
            "" => None,
            s => Some(FailureKind::parse(s).ok_or_else(|| err(14))?),
        };
        out.push(RunRecord {
            graph_id: field(0).parse().map_err(|_| err(0))?,
            topology: field(1).to_string(),
            nodes: opt_u(2)?,
            edges: opt_u(3)?,
            path_len: opt_u(5)?,
            delta_g: opt_f(6)?,
            delta_g_norm: opt_f(7)?,
            success: field(8).parse().map_err(|_| err(8))?,
            detect_time_s: opt_f(9)?,
            energy_j: opt_f(10)?,
            model: field(11).to_string(),
            sigma_rel: field(12).parse().map_err(|_| err(12))?,
            seed: field(13).parse().map_err(|_| err(13))?,
            failure_kind,
            oracle_match: None,
            diagnostics: None,
        });
    }
    Ok(out)
}

fn pick<T: Copy>(values: &[T], draw: u64) -> T {
    values[(draw % values.len() as u64) as usize]
}

/// Graph for one instance. Parameters are drawn from the topology lists with
/// streams derived from `seed`; the generator itself is seeded with `seed`.
pub fn generate_instance(topology: &TopologySpec, seed: u64) -> Result<Graph, GraphError> {
    let opts = topology.generator_options();
    match topology {
        TopologySpec::Grid {
            sides, removal_prob, ..
        } => {
            let side = pick(sides, mix_seed(seed, 1));
            let p = pick(removal_prob, mix_seed(seed, 2));
            generate_grid_with(side, side, p, seed, &opts)
        }
        TopologySpec::SmallWorld { n, k, beta, .. } => {
            let n = pick(n, mix_seed(seed, 1));
            let k = pick(k, mix_seed(seed, 2));
            let beta = pick(beta, mix_seed(seed, 3));
            generate_small_world_with(n, k, beta, seed, &opts)
        }
    }
}

/// Per-device parameters for one instance.
pub fn instance_devices(model: DeviceModel, sigma_rel: f64, seed: u64, edges: usize) -> Devices {
    if sigma_rel > 0.0 {
        Devices::varied(model, sigma_rel, mix_seed(seed, 4), edges)
    } else {
        Devices::uniform(model, edges)
    }
}

/// Everything one protocol run produces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub metrics: PathMetrics,
    pub state: CircuitState,
    pub trace: CurrentTrace,
    pub diagnostics: Diagnostics,
    /// Ramp halt time; `None` for constant runs.
    pub detection_time: Option<f64>,
    /// A ramp ran to `t_max` without a trigger.
    pub detection_failed: bool,
}

pub fn simulate(
    graph: &Graph,
    oracle: &PathOracle,
    devices: Devices,
    protocol: &Protocol,
    solver: &SolverConfig,
) -> Result<Simulation, SolverError> {
    let mut circuit = Circuit::new(graph, devices)?;
    let (state, trace, diagnostics, detection_time, detection_failed) = match protocol {
        Protocol::Ramp(ramp) => {
            let out = run_ramp(&mut circuit, ramp, solver)?;
            let t = out.detection.map(|d| d.halt_time);
            (out.state, out.trace, out.diagnostics, t, t.is_none())
        }
        Protocol::Constant { v_ctrl, t_max } => {
            let out = run_constant(&mut circuit, *v_ctrl, solver, *t_max)?;
            (out.state, out.trace, out.diagnostics, None, false)
        }
    };
    let metrics = compute_delta_g(graph, &state.x, circuit.devices(), oracle);
    Ok(Simulation {
        metrics,
        state,
        trace,
        diagnostics,
        detection_time,
        detection_failed,
    })
}

/// A validated configuration with its resolved solver and protocol.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub config: ExperimentConfig,
    pub solver: SolverConfig,
    pub protocol: Protocol,
}

impl BatchPlan {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(BatchPlan {
            solver: config.solver_config()?,
            protocol: config.resolved_protocol()?,
            config,
        })
    }

    pub fn instance_seed(&self, index: u64) -> u64 {
        mix_seed(self.config.master_seed, index)
    }

    /// Runs instance `index` end to end. Failures become records.
    pub fn run_instance(&self, index: u64) -> RunRecord {
        let cfg = &self.config;
        let seed = self.instance_seed(index);
        let mut rec = RunRecord {
            graph_id: index,
            topology: cfg.topology.name().to_string(),
            nodes: None,
            edges: None,
            path_len: None,
            delta_g: None,
            delta_g_norm: None,
            success: false,
            detect_time_s: None,
            energy_j: None,
            model: cfg.model.name().to_string(),
            sigma_rel: cfg.sigma_rel,
            seed,
            failure_kind: None,
            oracle_match: None,
            diagnostics: None,
        };
        let graph = match generate_instance(&cfg.topology, seed) {
            Ok(g) => g,
            Err(_) => {
                rec.failure_kind = Some(FailureKind::Generation);
                return rec;
            }
        };
        rec.nodes = Some(graph.node_count());
        rec.edges = Some(graph.edge_count());
        let oracle = match bfs_oracle(&graph) {
            Ok(o) => o,
            Err(_) => {
                rec.failure_kind = Some(FailureKind::Generation);
                return rec;
            }
        };
        rec.path_len = Some(oracle.length);
        let devices = instance_devices(cfg.model, cfg.sigma_rel, seed, graph.edge_count());
        match simulate(&graph, &oracle, devices, &self.protocol, &self.solver) {
            Ok(sim) => {
                rec.delta_g = Some(sim.metrics.delta_g);
                rec.delta_g_norm = Some(sim.metrics.normalized);
                rec.energy_j = Some(sim.state.energy);
                rec.detect_time_s = sim.detection_time;
                rec.oracle_match = Some(sim.metrics.read_path == oracle.path);
                rec.diagnostics = Some(sim.diagnostics);
                if sim.detection_failed {
                    rec.failure_kind = Some(FailureKind::Detection);
                } else {
                    rec.success = sim.metrics.success;
                }
            }
            Err(_) => rec.failure_kind = Some(FailureKind::Solver),
        }
        rec
    }
}

/// Worker count: `MEMPATH_WORKERS` if set to a positive integer, else the
/// available hardware parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every instance on `workers` threads. `sink` sees the records in
/// instance order as soon as each prefix is complete; an error from `sink`
/// stops the batch.
pub fn run_batch_with(
    plan: &BatchPlan,
    workers: usize,
    mut sink: impl FnMut(&RunRecord) -> Result<()>,
) -> Result<Vec<RunRecord>> {
    let count = plan.config.instance_count;
    let workers = workers.clamp(1, count);
    let next = AtomicUsize::new(0);
    let mut out = Vec::with_capacity(count);
    thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                if tx.send((i, plan.run_instance(i as u64))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for (i, rec) in rx {
            pending.insert(i, rec);
            while let Some(rec) = pending.remove(&out.len()) {
                if let Err(e) = sink(&rec) {
                    next.store(count, Ordering::Relaxed);
                    return Err(e);
                }
                out.push(rec);
            }
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn run_batch(plan: &BatchPlan, sink: impl FnMut(&RunRecord) -> Result<()>) -> Result<Vec<RunRecord>> {
    run_batch_with(plan, worker_count(), sink)
}
