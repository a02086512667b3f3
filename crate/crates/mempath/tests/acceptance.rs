//! Acceptance suite. Runs every criterion at full scale, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.
//!
//! Shared batches are computed once and reused by the criteria that pool
//! them (scaling, oracle equivalence, numerical hygiene, determinism).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mempath::batch::{records_to_csv, run_batch_with, BatchPlan, RunRecord};
use mempath::config::{ExperimentConfig, OutputSpec, ProtocolSpec, SolverOverrides, TopologySpec};
use mempath::summarize_scaling;
use mempath_core::graph::GeneratorOptions;
use mempath_core::protocols::{default_constant_t_max, run_constant, sweep_optimal_voltage};
use mempath_core::stats::{linear_fit, std_dev};
use mempath_core::{
    bfs_oracle, compute_delta_g, generate_grid_with, mix_seed, Circuit, DeviceModel, Devices, Edge, Graph,
    LinearParams, NodeId, SolverConfig,
};

const KCL_LIMIT: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Bookkeeping shared by criteria 3–8 and checked by 9 and 10.
#[derive(Default)]
struct Ledger {
    runs: usize,
    oracle_checked: usize,
    oracle_violations: usize,
    max_kcl: BTreeMap<&'static str, f64>,
    max_conservation: f64,
}

impl Ledger {
    fn note(&mut self, suite: &'static str, delta_g: f64, matches: bool, kcl: f64, conservation: f64) {
        self.runs += 1;
        if delta_g > 0.0 {
            self.oracle_checked += 1;
            if !matches {
                self.oracle_violations += 1;
            }
        }
        let m = self.max_kcl.entry(suite).or_insert(0.0);
        *m = m.max(kcl);
        self.max_conservation = self.max_conservation.max(conservation);
    }

    fn note_records(&mut self, suite: &'static str, records: &[RunRecord]) {
        for r in records {
            if let (Some(dg), Some(m), Some(d)) = (r.delta_g, r.oracle_match, r.diagnostics) {
                self.note(suite, dg, m, d.max_kcl_residual, d.max_conservation_error);
            }
        }
    }
}

fn config(
    master_seed: u64,
    count: usize,
    topology: TopologySpec,
    model: DeviceModel,
    sigma_rel: f64,
) -> ExperimentConfig {
    ExperimentConfig {
        master_seed,
        instance_count: count,
        topology,
        model,
        sigma_rel,
        protocol: ProtocolSpec::default(),
        solver: SolverOverrides::default(),
        output: OutputSpec::default(),
    }
}

fn grid_topology(sides: &[u32]) -> TopologySpec {
    TopologySpec::Grid {
        sides: sides.to_vec(),
        removal_prob: vec![0.2, 0.3, 0.4],
        min_path_len: None,
        max_path_len: None,
    }
}

fn small_world_topology() -> TopologySpec {
    TopologySpec::SmallWorld {
        n: vec![50, 100, 200],
        k: vec![2, 4],
        beta: vec![0.1, 0.3, 0.5],
        min_path_len: None,
        max_path_len: None,
    }
}

fn run_plan(cfg: ExperimentConfig, workers: usize) -> Vec<RunRecord> {
    let plan = BatchPlan::new(cfg).expect("valid acceptance config");
    run_batch_with(&plan, workers, |_| Ok(())).expect("in-memory batch")
}

fn success_fraction(records: &[RunRecord]) -> f64 {
    records.iter().filter(|r| r.success).count() as f64 / records.len() as f64
}

fn failures(records: &[RunRecord]) -> String {
    let f: Vec<String> = records
        .iter()
        .filter(|r| !r.success)
        .map(|r| {
            format!(
                "#{} N={:?} ΔG/ΔGmax={:?} {}",
                r.graph_id,
                r.path_len,
                r.delta_g_norm,
                r.failure_kind.map_or("", |k| k.as_str())
            )
        })
        .collect();
    if f.is_empty() {
        String::new()
    } else {
        format!("; failures: {}", f.join(", "))
    }
}

fn single_edge() -> Graph {
    Graph {
        nodes: vec![NodeId(0), NodeId(1)],
        edges: vec![Edge::new(0, 0, 1)],
        start: NodeId(0),
        end: NodeId(1),
        metadata: BTreeMap::new(),
    }
}

fn steady_x(v: f64) -> f64 {
    let mut c = Circuit::new(&single_edge(), Devices::uniform(DeviceModel::linear(), 1)).unwrap();
    let model = DeviceModel::linear();
    let out = run_constant(
        &mut c,
        v,
        &SolverConfig::linear_default(),
        default_constant_t_max(&model),
    )
    .unwrap();
    out.state.x[0]
}

fn criterion_1() -> Verdict {
    let p = LinearParams::default();
    let v_th = 1.0 / (p.gamma * p.tau * p.g_on);
    let lo = steady_x(0.9 * v_th);
    let hi = steady_x(1.2 * v_th);
    verdict(
        lo <= 0.01 && hi >= 0.99 && (v_th - 1e-4).abs() < 1e-18,
        format!("threshold {v_th:.3e} V; x(0.9e-4 V) = {lo:.3e}, x(1.2e-4 V) = {hi:.6}"),
    )
}

fn criterion_2() -> Verdict {
    let p = LinearParams::default();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for v in [2e-5, 5e-5, 8e-5] {
        let k = p.gamma * p.tau * v;
        let expected = k * p.g_off / (1.0 - k * (p.g_on - p.g_off));
        let got = steady_x(v);
        worst = worst.max((got - expected).abs());
        parts.push(format!("{v:.0e} V: {got:.6e} vs {expected:.6e}"));
    }
    verdict(worst <= 1e-3, format!("{}; max error {worst:.2e}", parts.join(", ")))
}

/// Instance-independent sweep grid: odd multiples of 0.25e-4 V, restricted
/// to a window around the expected optimum.
const SWEEP_SPACING: f64 = 0.5e-4;

fn sweep_grid(n: usize) -> Vec<f64> {
    let lo = (0.85 * n as f64 - 1.0) * 1e-4;
    let hi = (1.15 * n as f64 + 1.0) * 1e-4;
    (0..)
        .map(|j| 0.25e-4 + j as f64 * SWEEP_SPACING)
        .skip_while(|&v| v < lo)
        .take_while(|&v| v <= hi)
        .collect()
}

fn criterion_3(ledger: &mut Ledger) -> Verdict {
    // Five instances per band of path lengths; larger grids and sparser
    // edges for the long bands, where unique long paths are rare.
    let bands: [(usize, usize, u32, f64); 6] = [
        (4, 9, 10, 0.3),
        (10, 15, 14, 0.4),
        (16, 21, 18, 0.4),
        (22, 27, 20, 0.4),
        (28, 33, 22, 0.4),
        (34, 40, 24, 0.4),
    ];
    let model = DeviceModel::linear();
    let cfg = SolverConfig::linear_default();
    let t_max = default_constant_t_max(&model);
    let mut ns = Vec::new();
    let mut vopts = Vec::new();
    let mut off = Vec::new();
    for (b, &(lo, hi, side, p)) in bands.iter().enumerate() {
        for i in 0..5u64 {
            let opts = GeneratorOptions {
                max_attempts: 5000,
                min_path_len: lo,
                max_path_len: hi,
            };
            let g = match generate_grid_with(side, side, p, mix_seed(300 + b as u64, i), &opts) {
                Ok(g) => g,
                Err(e) => return verdict(false, format!("band {lo}-{hi}: {e}")),
            };
            let o = bfs_oracle(&g).unwrap();
            let mut c = Circuit::new(&g, Devices::uniform(model, g.edge_count())).unwrap();
            let s = match sweep_optimal_voltage(&g, &mut c, &o, &sweep_grid(o.length), &cfg, t_max) {
                Ok(s) => s,
                Err(e) => return verdict(false, format!("N={}: {e}", o.length)),
            };
            for pt in &s.curve {
                ledger.note(
                    "sweep",
                    pt.metrics.delta_g,
                    pt.metrics.read_path == o.path,
                    pt.diagnostics.max_kcl_residual,
                    pt.diagnostics.max_conservation_error,
                );
            }
            let n = o.length as f64;
            if (s.v_opt - n * 1e-4).abs() > SWEEP_SPACING * (1.0 + 1e-9) {
                off.push(format!("N={} v_opt={:.3e}", o.length, s.v_opt));
            }
            ns.push(n);
            vopts.push(s.v_opt);
        }
    }
    let fit = linear_fit(&ns, &vopts).unwrap();
    let rel = (fit.slope - 1e-4).abs() / 1e-4;
    let n_lo = ns.iter().copied().fold(f64::INFINITY, f64::min);
    let n_hi = ns.iter().copied().fold(0.0, f64::max);
    verdict(
        ns.len() >= 30 && rel <= 0.25 && off.is_empty(),
        format!(
            "{} instances, N in [{n_lo}, {n_hi}]; slope {:.4e} V/device ({:.1} % off), intercept {:.2e} V; {} v_opt outside one spacing{}",
            ns.len(),
            fit.slope,
            100.0 * rel,
            fit.intercept,
            off.len(),
            if off.is_empty() { String::new() } else { format!(": {}", off.join(", ")) }
        ),
    )
}

struct Batches {
    grid: Vec<RunRecord>,
    small_world: Vec<RunRecord>,
}

fn linear_batches(workers: usize) -> Batches {
    Batches {
        grid: run_plan(
            config(
                41,
                100,
                grid_topology(&[6, 8, 10, 12, 14, 16, 18, 20]),
                DeviceModel::linear(),
                0.0,
            ),
            workers,
        ),
        small_world: run_plan(
            config(42, 100, small_world_topology(), DeviceModel::linear(), 0.0),
            workers,
        ),
    }
}

fn criterion_4(b: &Batches, ledger: &mut Ledger) -> Verdict {
    ledger.note_records("linear ramp", &b.grid);
    ledger.note_records("linear ramp", &b.small_world);
    let (fg, fs) = (success_fraction(&b.grid), success_fraction(&b.small_world));
    let min_norm = b
        .grid
        .iter()
        .chain(&b.small_world)
        .filter_map(|r| r.delta_g_norm)
        .fold(f64::INFINITY, f64::min);
    verdict(
        b.grid.len() >= 100 && b.small_world.len() >= 100 && fg == 1.0 && fs == 1.0,
        format!(
            "grid {}/{}, small-world {}/{} with ΔG > 0; smallest ΔG/ΔGmax {min_norm:.4}{}{}",
            b.grid.iter().filter(|r| r.success).count(),
            b.grid.len(),
            b.small_world.iter().filter(|r| r.success).count(),
            b.small_world.len(),
            failures(&b.grid),
            failures(&b.small_world)
        ),
    )
}

const CHANG_SIDES: [u32; 6] = [6, 8, 10, 12, 14, 16];
const CHANG_SEED: u64 = 51;

fn normalized(records: &[RunRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.delta_g_norm).collect()
}

fn criterion_5(chang: &[RunRecord], ledger: &mut Ledger) -> Verdict {
    ledger.note_records("chang ramp", chang);
    let matched = run_plan(
        config(CHANG_SEED, 50, grid_topology(&CHANG_SIDES), DeviceModel::linear(), 0.0),
        1,
    );
    ledger.note_records("linear ramp", &matched);
    let same_graphs = chang
        .iter()
        .zip(&matched)
        .all(|(a, b)| (a.nodes, a.edges, a.path_len) == (b.nodes, b.edges, b.path_len));
    let (sc, sl) = (std_dev(&normalized(chang)), std_dev(&normalized(&matched)));
    let f = success_fraction(chang);
    verdict(
        chang.len() >= 50 && f == 1.0 && sc > sl && same_graphs,
        format!(
            "{}/{} with ΔG > 0; std of ΔG/ΔGmax {sc:.4} (Chang) vs {sl:.4} (linear, same graphs: {same_graphs}){}",
            chang.iter().filter(|r| r.success).count(),
            chang.len(),
            failures(chang)
        ),
    )
}

fn criterion_6(ledger: &mut Ledger) -> Verdict {
    let varied = run_plan(
        config(CHANG_SEED, 50, grid_topology(&CHANG_SIDES), DeviceModel::chang(), 0.10),
        1,
    );
    ledger.note_records("chang ramp, varied", &varied);
    let f = success_fraction(&varied);
    verdict(
        varied.len() >= 50 && f >= 0.95,
        format!(
            "{}/{} with ΔG > 0 at sigma_rel = 0.10 ({:.1} %); mean ΔG/ΔGmax {:.4}{}",
            varied.iter().filter(|r| r.success).count(),
            varied.len(),
            100.0 * f,
            mempath_core::stats::mean(&normalized(&varied)),
            failures(&varied)
        ),
    )
}

fn scaling_check(label: &str, records: &[RunRecord]) -> (bool, String) {
    match summarize_scaling(records) {
        Ok(s) => {
            let ok = s.spearman_time_vs_n >= 0.8
                && s.spearman_energy_vs_n >= 0.8
                && s.spearman_time_vs_n > s.spearman_time_vs_size
                && s.spearman_energy_vs_n > s.spearman_energy_vs_size;
            (
                ok,
                format!(
                    "{label} ({} runs): time ρ(N) {:.3} vs ρ(size) {:.3}, energy ρ(N) {:.3} vs ρ(size) {:.3}",
                    s.records,
                    s.spearman_time_vs_n,
                    s.spearman_time_vs_size,
                    s.spearman_energy_vs_n,
                    s.spearman_energy_vs_size
                ),
            )
        }
        Err(e) => (false, format!("{label}: {e}")),
    }
}

fn criterion_7(b: &Batches, chang: &[RunRecord]) -> Verdict {
    let pooled: Vec<RunRecord> = b.grid.iter().chain(&b.small_world).cloned().collect();
    let (a, da) = scaling_check("linear", &pooled);
    let (c, dc) = scaling_check("Chang", chang);
    verdict(a && c, format!("{da}; {dc}"))
}

fn criterion_8(ledger: &mut Ledger) -> Verdict {
    let opts = GeneratorOptions {
        min_path_len: 10,
        max_path_len: 14,
        ..GeneratorOptions::default()
    };
    let g = generate_grid_with(14, 14, 0.4, 8, &opts).unwrap();
    let o = bfs_oracle(&g).unwrap();
    let n = o.length as f64;
    let model = DeviceModel::linear();
    let cfg = SolverConfig::linear_default();
    let t_max = default_constant_t_max(&model);
    let mut c = Circuit::new(&g, Devices::uniform(model, g.edge_count())).unwrap();
    let factors = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5];
    let mut at = BTreeMap::new();
    for f in factors {
        let out = run_constant(&mut c, f * n * 1e-4, &cfg, t_max).unwrap();
        let m = compute_delta_g(&g, &out.state.x, c.devices(), &o);
        ledger.note(
            "constant",
            m.delta_g,
            m.read_path == o.path,
            out.diagnostics.max_kcl_residual,
            out.diagnostics.max_conservation_error,
        );
        at.insert((f * 100.0) as u32, m.normalized);
    }
    let optimum = at.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let (low, mid, high) = (at[&25], at[&100], at[&250]);
    verdict(
        o.length >= 10 && mid > 0.9 && low < 0.05 && high < optimum,
        format!(
            "N = {}: ΔG/ΔGmax {low:.4} at 0.25·N·1e-4 V, {mid:.4} at N·1e-4 V, {high:.4} at 2.5·N·1e-4 V; optimum over {:?}×N·1e-4 V is {optimum:.4}",
            o.length, factors
        ),
    )
}

fn criterion_9(ledger: &Ledger) -> Verdict {
    verdict(
        ledger.oracle_violations == 0 && ledger.oracle_checked > 0,
        format!(
            "{} runs, {} with ΔG > 0, {} readouts differing from the BFS path",
            ledger.runs, ledger.oracle_checked, ledger.oracle_violations
        ),
    )
}

/// Uniform draw in [0, 1) from a counter-based stream.
fn unit(seed: u64, k: u64) -> f64 {
    (mix_seed(seed, k) >> 11) as f64 / (1u64 << 53) as f64
}

/// Random connected circuit on at most ten nodes: a random tree plus
/// extra chords, terminals 0 and n − 1.
fn random_small_graph(seed: u64) -> Graph {
    let mut k = 0;
    let mut next = || {
        k += 1;
        unit(seed, k)
    };
    let n = 3 + (next() * 8.0) as u32;
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = (next() * i as f64) as u32;
        pairs.insert((j, i));
    }
    let extra = (next() * n as f64) as usize;
    for _ in 0..extra {
        let a = (next() * n as f64) as u32;
        let b = (next() * n as f64) as u32;
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    Graph {
        nodes: (0..n).map(NodeId).collect(),
        edges: pairs
            .iter()
            .enumerate()
            .map(|(id, &(a, b))| Edge::new(id as u32, a, b))
            .collect(),
        start: NodeId(0),
        end: NodeId(n - 1),
        metadata: BTreeMap::new(),
    }
}

/// Worst relative deviation between the assembled Newton Jacobian and a
/// central finite-difference Jacobian over random Chang circuits.
fn jacobian_check(circuits: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..circuits {
        let seed = mix_seed(1000, c);
        let g = random_small_graph(seed);
        let devices = Devices::uniform(DeviceModel::chang(), g.edge_count());
        let circuit = Circuit::new(&g, devices).unwrap();
        let mut k = 1000;
        let mut next = || {
            k += 1;
            unit(seed, k)
        };
        let x: Vec<f64> = (0..g.edge_count()).map(|_| next()).collect();
        let v = 0.1 + 1.9 * next();
        let mut phi: Vec<f64> = (0..g.node_count()).map(|_| v * (1.4 * next() - 0.2)).collect();
        let start = g.index_of(g.start).unwrap();
        let end = g.index_of(g.end).unwrap();
        phi[start] = v;
        phi[end] = 0.0;
        let unknowns = circuit.unknown_nodes().to_vec();
        let nu = unknowns.len();
        if nu == 0 {
            continue;
        }
        let jac = circuit.nodal_jacobian(&x, &phi);
        let scale = jac.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        for (col, &node) in unknowns.iter().enumerate() {
            let mut up = phi.clone();
            up[node] += h;
            let mut down = phi.clone();
            down[node] -= h;
            let (ru, rd) = (circuit.nodal_residual(&x, &up), circuit.nodal_residual(&x, &down));
            for row in 0..nu {
                let fd = (ru[row] - rd[row]) / (2.0 * h);
                worst = worst.max((fd - jac[row * nu + col]).abs() / scale);
            }
        }
    }
    worst
}

fn criterion_10(b: &Batches, ledger: &Ledger) -> Verdict {
    let kcl = ledger.max_kcl.values().copied().fold(0.0, f64::max);
    let per_suite: Vec<String> = ledger.max_kcl.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    let jac = jacobian_check(100);

    let base = config(
        41,
        100,
        grid_topology(&[6, 8, 10, 12, 14, 16, 18, 20]),
        DeviceModel::linear(),
        0.0,
    );
    let mut halved = base.clone();
    halved.solver.dt = Some(SolverConfig::linear_default().dt / 2.0);
    let plan = BatchPlan::new(halved).unwrap();
    let mut worst_dg: f64 = 0.0;
    for i in 0..10 {
        let fine = plan.run_instance(i);
        let coarse = &b.grid[i as usize];
        match (fine.delta_g_norm, coarse.delta_g_norm) {
            (Some(a), Some(c)) => worst_dg = worst_dg.max((a - c).abs()),
            _ => worst_dg = f64::INFINITY,
        }
    }
    verdict(
        kcl <= KCL_LIMIT && jac <= 1e-5 && worst_dg < 0.01,
        format!(
            "max KCL residual {kcl:.2e} ({}), source/ground mismatch {:.1e}; Jacobian vs finite differences {jac:.2e} on 100 circuits; halving dt moves ΔG by at most {:.3} % of ΔGmax on 10 instances",
            per_suite.join(", "),
            ledger.max_conservation,
            100.0 * worst_dg
        ),
    )
}

fn criterion_11(b: &Batches) -> Verdict {
    // Rerun with a different worker count as well.
    let again = linear_batches(3);
    let same_grid = records_to_csv(&b.grid) == records_to_csv(&again.grid);
    let same_sw = records_to_csv(&b.small_world) == records_to_csv(&again.small_world);
    verdict(
        same_grid && same_sw,
        format!(
            "grid records identical: {same_grid} ({} bytes); small-world records identical: {same_sw} ({} bytes)",
            records_to_csv(&b.grid).len(),
            records_to_csv(&b.small_world).len()
        ),
    )
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Option<Duration>,
    verdict: Verdict,
    elapsed: Duration,
}

fn timed(id: u32, title: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Criterion {
    let t = Instant::now();
    let verdict = f();
    let elapsed = t.elapsed();
    let line = Criterion {
        id,
        title,
        limit,
        verdict,
        elapsed,
    };
    print_line(&line);
    line
}

fn passed(c: &Criterion) -> bool {
    c.verdict.pass && c.limit.is_none_or(|l| c.elapsed <= l)
}

fn print_line(c: &Criterion) {
    let limit = c.limit.map(|l| format!(" / limit {:.0?}", l)).unwrap_or_default();
    println!(
        "criterion {:>2} {} {}: {} [{:.1?}{}]",
        c.id,
        if passed(c) { "PASS" } else { "FAIL" },
        c.title,
        c.verdict.detail,
        c.elapsed,
        limit
    );
}

fn main() {
    let secs = Duration::from_secs;
    let started = Instant::now();
    let mut ledger = Ledger::default();
    let mut all = Vec::new();

    all.push(timed(1, "single-device threshold", Some(secs(1)), criterion_1));
    all.push(timed(2, "fixed-point accuracy", Some(secs(1)), criterion_2));
    all.push(timed(3, "optimal-voltage law", Some(secs(15 * 60)), || {
        criterion_3(&mut ledger)
    }));

    let mut batches = None;
    all.push(timed(4, "ramp success, linear", Some(secs(15 * 60)), || {
        let b = linear_batches(1);
        let v = criterion_4(&b, &mut ledger);
        batches = Some(b);
        v
    }));
    let batches = batches.expect("criterion 4 ran");

    let mut chang = Vec::new();
    all.push(timed(5, "ramp success, Chang", Some(secs(30 * 60)), || {
        chang = run_plan(
            config(CHANG_SEED, 50, grid_topology(&CHANG_SIDES), DeviceModel::chang(), 0.0),
            1,
        );
        criterion_5(&chang, &mut ledger)
    }));
    all.push(timed(6, "variability robustness", Some(secs(30 * 60)), || {
        criterion_6(&mut ledger)
    }));
    all.push(timed(7, "time and energy scaling", None, || {
        criterion_7(&batches, &chang)
    }));
    all.push(timed(8, "constant-voltage failure modes", Some(secs(2 * 60)), || {
        criterion_8(&mut ledger)
    }));
    all.push(timed(9, "oracle equivalence", None, || criterion_9(&ledger)));
    all.push(timed(10, "numerical hygiene", None, || criterion_10(&batches, &ledger)));
    all.push(timed(11, "determinism", None, || criterion_11(&batches)));

    println!();
    println!("summary ({:.1?}):", started.elapsed());
    for c in &all {
        print_line(c);
    }
    let failed: Vec<u32> = all.iter().filter(|c| !passed(c)).map(|c| c.id).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", all.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
