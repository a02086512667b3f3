//! Transient simulation of a memristor network.
//!
//! At every instant the node potentials satisfy Kirchhoff's current law at
//! each junction, with the start node held at the control voltage and the
//! end node grounded. Device states are then advanced together by an
//! explicit Euler step whose size is halved whenever any state would move
//! by more than `dx_max`.
//!
//! Linear devices give a weighted graph Laplacian that is solved directly;
//! nonlinear devices go through a damped Newton iteration whose Jacobian is
//! the Laplacian of the differential conductances. Both reuse one envelope
//! Cholesky structure built when the circuit is compiled.
//!
//! Parts of the graph hanging off a single articulation point carry no
//! current at all. They are kept out of the linear systems and receive the
//! potential of their attachment node, which makes their branch voltages
//! exactly zero.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{edges_on_simple_paths, Adjacency, Graph};
use crate::models::Devices;
use crate::sparse::EnvelopeCholesky;

/// Floor added to the per-node current scale when judging KCL residuals.
pub const KCL_CURRENT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Base time step (s).
    pub dt: f64,
    /// Largest state change any device may take in one step.
    pub dx_max: f64,
    /// Absolute KCL tolerance for Newton (A).
    pub newton_tol: f64,
    pub newton_max_iter: u32,
    /// Trace sampling period (s).
    pub sample_dt: f64,
    /// Number of times `dt` may be halved within one step.
    pub max_halvings: u32,
    /// Relative KCL tolerance for Newton, against the sum of incident
    /// branch current magnitudes.
    pub kcl_rel_tol: f64,
}

impl SolverConfig {
    pub fn linear_default() -> Self {
        SolverConfig {
            dt: 1e-3,
            dx_max: 0.05,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            sample_dt: 1e-2,
            max_halvings: 6,
            kcl_rel_tol: 1e-12,
        }
    }

    pub fn chang_default() -> Self {
        SolverConfig {
            dt: 1e-2,
            sample_dt: 1e-1,
            ..Self::linear_default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.dt > 0.0
            && self.dx_max > 0.0
            && self.dx_max < 1.0
            && self.newton_tol > 0.0
            && self.newton_max_iter > 0
            && self.sample_dt > 0.0
            && self.kcl_rel_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig(alloc::format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Newton iteration did not converge at t = {t} s")]
    NewtonNoConvergence { t: f64 },
    #[error("nodal system is singular (floating subnetwork)")]
    SingularSystem,
    #[error("step size collapsed at t = {t} s")]
    StepCollapse { t: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("device parameters do not match the graph ({devices} devices, {edges} edges)")]
    DeviceCountMismatch { devices: usize, edges: usize },
}

/// Solution of the nodal equations for one device-state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Potential of every node, by dense index.
    pub potentials: Vec<f64>,
    /// Signed voltage `φ(u) − φ(v)` per edge.
    pub branch_v: Vec<f64>,
    /// Current from `u` to `v` per edge.
    pub branch_i: Vec<f64>,
    /// Current delivered by the source into the start node.
    pub i_total: f64,
    /// Current flowing out of the network into ground at the end node.
    pub i_end: f64,
    pub newton_iterations: u32,
}

/// Everything that evolves during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitState {
    /// Internal state per edge, in `[0, 1]`.
    pub x: Vec<f64>,
    pub potentials: Vec<f64>,
    pub branch_v: Vec<f64>,
    pub branch_i: Vec<f64>,
    /// `dx/dt` per edge, zeroed where the state is pinned at a bound.
    pub rates: Vec<f64>,
    pub t: f64,
    /// Control voltage at time `t`.
    pub v_ctrl: f64,
    pub i_total: f64,
    pub i_end: f64,
    /// Energy delivered by the source since the run began (J).
    pub energy: f64,
}

impl CircuitState {
    /// Largest projected state rate over all devices.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Relative mismatch between source current and ground current.
    pub fn conservation_error(&self) -> f64 {
        let scale = self.i_total.abs().max(self.i_end.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.i_total - self.i_end).abs() / scale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub v_ctrl: f64,
    pub i_total: f64,
}

/// Source current sampled at a fixed period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentTrace {
    pub sample_dt: f64,
    pub samples: Vec<TraceSample>,
}

impl CurrentTrace {
    pub fn new(sample_dt: f64) -> Self {
        CurrentTrace {
            sample_dt,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn currents(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.i_total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The stop predicate fired.
    Stopped,
    /// `t_max` was reached first.
    TimedOut,
}

/// Numerical health observed at the trace samples of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_kcl_residual: f64,
    pub max_conservation_error: f64,
    pub steps: u64,
    pub halvings: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: CurrentTrace,
    pub reason: StopReason,
    pub diagnostics: Diagnostics,
}

const NONE: usize = usize::MAX;

const LINEAR_REFINEMENTS: usize = 3;

/// Node potentials as unevaluated sums `hi + lo`. Branch voltages between
/// nearly equal potentials keep full relative precision this way.
#[derive(Debug, Clone)]
struct Potentials {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

impl Potentials {
    fn pinned(n: usize, start: usize, v_ctrl: f64) -> Self {
        let mut p = Potentials {
            hi: vec![0.0; n],
            lo: vec![0.0; n],
        };
        p.hi[start] = v_ctrl;
        p
    }

    fn from_f64(v: &[f64]) -> Self {
        Potentials {
            hi: v.to_vec(),
            lo: vec![0.0; v.len()],
        }
    }

    fn set(&mut self, node: usize, v: f64) {
        self.hi[node] = v;
        self.lo[node] = 0.0;
    }

    fn copy_from(&mut self, other: &Potentials) {
        self.hi.copy_from_slice(&other.hi);
        self.lo.copy_from_slice(&other.lo);
    }

    fn diff(&self, a: usize, b: usize) -> f64 {
        (self.hi[a] - self.hi[b]) + (self.lo[a] - self.lo[b])
    }

    fn add(&mut self, node: usize, d: f64) {
        let (hi, lo) = (self.hi[node], self.lo[node]);
        let s = hi + d;
        let bb = s - hi;
        let err = (hi - (s - bb)) + (d - bb);
        let t = lo + err;
        let h = s + t;
        self.hi[node] = h;
        self.lo[node] = t - (h - s);
    }
}

/// A graph compiled into a circuit with per-edge devices.
#[derive(Debug, Clone)]
pub struct Circuit {
    adj: Adjacency,
    devices: Devices,
    linear: bool,
    /// Edges lying on some simple start–end path.
    active: Vec<bool>,
    active_edges: Vec<usize>,
    /// Unknown index per node, `NONE` for terminals and dead pockets.
    unknown: Vec<usize>,
    unknown_nodes: Vec<usize>,
    /// `(node, source)` pairs: `node` copies the potential of `source`.
    fill: Vec<(usize, usize)>,
    chol: EnvelopeCholesky,
    scratch_x: Vec<f64>,
}

impl Circuit {
    pub fn new(graph: &Graph, devices: Devices) -> Result<Self, SolverError> {
        if devices.len() != graph.edges.len() {
            return Err(SolverError::DeviceCountMismatch {
                devices: devices.len(),
                edges: graph.edges.len(),
            });
        }
        let adj = Adjacency::new(graph);
        let n = adj.node_count();
        let active = edges_on_simple_paths(graph);
        let active_edges: Vec<usize> = (0..active.len()).filter(|&e| active[e]).collect();

        let mut live = vec![false; n];
        for &e in &active_edges {
            let (a, b) = adj.ends(e);
            live[a] = true;
            live[b] = true;
        }
        live[adj.start] = true;
        live[adj.end] = true;

        let mut unknown = vec![NONE; n];
        let mut unknown_nodes = Vec::new();
        for i in 0..n {
            if live[i] && i != adj.start && i != adj.end {
                unknown[i] = unknown_nodes.len();
                unknown_nodes.push(i);
            }
        }

        // Dead pockets inherit potentials outward from the live block.
        let mut fill = Vec::new();
        let mut reached = live.clone();
        let mut queue: alloc::collections::VecDeque<usize> = (0..n).filter(|&i| live[i]).collect();
        while let Some(i) = queue.pop_front() {
            for &(_, m) in adj.incident(i) {
                if !reached[m] {
                    reached[m] = true;
                    fill.push((m, i));
                    queue.push_back(m);
                }
            }
        }

        let pattern: Vec<(usize, usize)> = active_edges
            .iter()
            .filter_map(|&e| {
                let (a, b) = adj.ends(e);
                (unknown[a] != NONE && unknown[b] != NONE).then(|| (unknown[a], unknown[b]))
            })
            .collect();
        let chol = EnvelopeCholesky::new(unknown_nodes.len(), &pattern);
        let linear = devices.all_linear();
        Ok(Circuit {
            adj,
            linear,
            active,
            active_edges,
            unknown,
            unknown_nodes,
            fill,
            chol,
            scratch_x: vec![0.0; devices.len()],
            devices,
        })
    }

    pub fn devices(&self) -> &Devices {
        &self.devices
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adj
    }

    pub fn edge_count(&self) -> usize {
        self.devices.len()
    }

    pub fn node_count(&self) -> usize {
        self.adj.node_count()
    }

    /// Whether edge `e` can carry current at all.
    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown_nodes.len()
    }

    fn pinned(&self, node: usize, v_ctrl: f64) -> f64 {
        if node == self.adj.start {
            v_ctrl
        } else {
            0.0
        }
    }

    fn stamp(&mut self, e: usize, g: f64, v_ctrl: f64, rhs: &mut [f64]) {
        let (a, b) = self.adj.ends(e);
        match (self.unknown[a], self.unknown[b]) {
            (NONE, NONE) => {}
            (ia, NONE) => {
                self.chol.add_diag(ia, g);
                rhs[ia] += g * self.pinned(b, v_ctrl);
            }
            (NONE, ib) => {
                self.chol.add_diag(ib, g);
                rhs[ib] += g * self.pinned(a, v_ctrl);
            }
            (ia, ib) => {
                self.chol.add_diag(ia, g);
                self.chol.add_diag(ib, g);
                self.chol.add_offdiag(ia, ib, -g);
            }
        }
    }

    /// Net current leaving each unknown node, plus the sum of incident
    /// current magnitudes, through active edges.
    fn kcl(&self, x: &[f64], phi: &Potentials, out: &mut [f64], scale: &mut [f64]) {
        out.iter_mut().for_each(|r| *r = 0.0);
        scale.iter_mut().for_each(|s| *s = 0.0);
        for &e in &self.active_edges {
            let (a, b) = self.adj.ends(e);
            let i = self.devices.get(e).current(x[e], phi.diff(a, b));
            if self.unknown[a] != NONE {
                out[self.unknown[a]] += i;
                scale[self.unknown[a]] += i.abs();
            }
            if self.unknown[b] != NONE {
                out[self.unknown[b]] -= i;
                scale[self.unknown[b]] += i.abs();
            }
        }
    }

    fn write_unknowns(&self, phi: &mut Potentials, delta: &[f64], step: f64) {
        for (k, &node) in self.unknown_nodes.iter().enumerate() {
            phi.add(node, step * delta[k]);
        }
    }

    /// Differential conductance of every active edge, reported as
    /// `(unknown, Some(other unknown), g)` or `(unknown, None, g)` when the
    /// other end is pinned.
    fn jacobian_stamps(&self, x: &[f64], phi: &Potentials, mut f: impl FnMut(usize, Option<usize>, f64)) {
        for &e in &self.active_edges {
            let (a, b) = self.adj.ends(e);
            let g = self.devices.get(e).dcurrent_dv(x[e], phi.diff(a, b));
            match (self.unknown[a], self.unknown[b]) {
                (NONE, NONE) => {}
                (ia, NONE) | (NONE, ia) => f(ia, None, g),
                (ia, ib) => f(ia, Some(ib), g),
            }
        }
    }

    /// Dense indices of the nodes whose potentials are solved for.
    pub fn unknown_nodes(&self) -> &[usize] {
        &self.unknown_nodes
    }

    /// Net current leaving each node of [`Self::unknown_nodes`] for the given
    /// node potentials.
    pub fn nodal_residual(&self, x: &[f64], potentials: &[f64]) -> Vec<f64> {
        let nu = self.unknown_count();
        let (mut r, mut s) = (vec![0.0; nu], vec![0.0; nu]);
        self.kcl(x, &Potentials::from_f64(potentials), &mut r, &mut s);
        r
    }

    /// Jacobian of [`Self::nodal_residual`] with respect to the unknown
    /// potentials, dense and row-major, as assembled for Newton.
    pub fn nodal_jacobian(&self, x: &[f64], potentials: &[f64]) -> Vec<f64> {
        let nu = self.unknown_count();
        let mut j = vec![0.0; nu * nu];
        self.jacobian_stamps(x, &Potentials::from_f64(potentials), |ia, ib, g| {
            j[ia * nu + ia] += g;
            if let Some(ib) = ib {
                j[ib * nu + ib] += g;
                j[ia * nu + ib] -= g;
                j[ib * nu + ia] -= g;
            }
        });
        j
    }

    fn kcl_met(f: &[f64], scale: &[f64], cfg: &SolverConfig) -> bool {
        f.iter()
            .zip(scale)
            .all(|(&r, &s)| r.abs() <= cfg.newton_tol && r.abs() <= cfg.kcl_rel_tol * (s + KCL_CURRENT_FLOOR))
    }

    fn linear_potentials(&mut self, x: &[f64], v_ctrl: f64, cfg: &SolverConfig) -> Result<Potentials, SolverError> {
        let nu = self.unknown_count();
        let mut phi = Potentials::pinned(self.node_count(), self.adj.start, v_ctrl);
        if nu == 0 {
            return Ok(phi);
        }
        self.chol.clear();
        let mut rhs = vec![0.0; nu];
        for k in 0..self.active_edges.len() {
            let e = self.active_edges[k];
            let g = self.devices.conductance(e, x[e]);
            self.stamp(e, g, v_ctrl, &mut rhs);
        }
        self.chol.factor().map_err(|_| SolverError::SingularSystem)?;
        self.chol.solve(&mut rhs);
        self.write_unknowns(&mut phi, &rhs, 1.0);

        // Iterative refinement against the extended-precision residual.
        let mut r = vec![0.0; nu];
        let mut s = vec![0.0; nu];
        for _ in 0..LINEAR_REFINEMENTS {
            self.kcl(x, &phi, &mut r, &mut s);
            if r.iter()
                .zip(&s)
                .all(|(a, b)| a.abs() <= 1e-3 * cfg.kcl_rel_tol * (b + KCL_CURRENT_FLOOR))
            {
                break;
            }
            r.iter_mut().for_each(|v| *v = -*v);
            self.chol.solve(&mut r);
            self.write_unknowns(&mut phi, &r, 1.0);
        }
        Ok(phi)
    }

    fn newton_potentials(
        &mut self,
        x: &[f64],
        v_ctrl: f64,
        guess: Option<&[f64]>,
        cfg: &SolverConfig,
    ) -> Result<(Potentials, u32), SolverError> {
        let nu = self.unknown_count();
        let mut phi = match guess {
            Some(g) if g.len() == self.node_count() => {
                let mut p = Potentials::from_f64(g);
                p.set(self.adj.start, v_ctrl);
                p.set(self.adj.end, 0.0);
                p
            }
            _ => self.linear_potentials(x, v_ctrl, cfg)?,
        };
        if nu == 0 {
            return Ok((phi, 0));
        }
        let mut f = vec![0.0; nu];
        let mut scale = vec![0.0; nu];
        let mut trial = phi.clone();
        let mut f_trial = vec![0.0; nu];
        let mut s_trial = vec![0.0; nu];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();

        self.kcl(x, &phi, &mut f, &mut scale);
        for iter in 0..cfg.newton_max_iter {
            if Self::kcl_met(&f, &scale, cfg) {
                return Ok((phi, iter));
            }

            self.chol.clear();
            let mut chol = core::mem::take(&mut self.chol);
            self.jacobian_stamps(x, &phi, |ia, ib, g| {
                chol.add_diag(ia, g);
                if let Some(ib) = ib {
                    chol.add_diag(ib, g);
                    chol.add_offdiag(ia, ib, -g);
                }
            });
            self.chol = chol;
            self.chol.factor().map_err(|_| SolverError::SingularSystem)?;
            let mut delta: Vec<f64> = f.iter().map(|r| -r).collect();
            self.chol.solve(&mut delta);

            let base = norm(&f);
            let mut step = 1.0;
            let improved = loop {
                trial.copy_from(&phi);
                self.write_unknowns(&mut trial, &delta, step);
                self.kcl(x, &trial, &mut f_trial, &mut s_trial);
                let fine = f_trial.iter().all(|v| v.is_finite());
                if fine && norm(&f_trial) < base {
                    break true;
                }
                step *= 0.5;
                if step < 1.0 / 1024.0 {
                    if !fine {
                        return Err(SolverError::NewtonNoConvergence { t: f64::NAN });
                    }
                    break false;
                }
            };
            if !improved {
                // The residual is at its rounding floor.
                if f.iter().all(|r| r.abs() <= cfg.newton_tol) {
                    return Ok((phi, iter + 1));
                }
                return Err(SolverError::NewtonNoConvergence { t: f64::NAN });
            }
            core::mem::swap(&mut phi, &mut trial);
            core::mem::swap(&mut f, &mut f_trial);
            core::mem::swap(&mut scale, &mut s_trial);
        }
        Err(SolverError::NewtonNoConvergence { t: f64::NAN })
    }

    /// Node potentials, branch quantities and source current for the given
    /// device states and control voltage.
    pub fn solve_potentials(
        &mut self,
        x: &[f64],
        v_ctrl: f64,
        guess: Option<&[f64]>,
        cfg: &SolverConfig,
    ) -> Result<Solution, SolverError> {
        let (mut phi, newton_iterations) = if self.linear {
            (self.linear_potentials(x, v_ctrl, cfg)?, 0)
        } else {
            self.newton_potentials(x, v_ctrl, guess, cfg)?
        };
        for &(node, src) in &self.fill {
            phi.hi[node] = phi.hi[src];
            phi.lo[node] = phi.lo[src];
        }
        let m = self.edge_count();
        let mut branch_v = vec![0.0; m];
        let mut branch_i = vec![0.0; m];
        let (mut i_total, mut i_end) = (0.0, 0.0);
        for e in 0..m {
            let (a, b) = self.adj.ends(e);
            let v = phi.diff(a, b);
            let i = self.devices.get(e).current(x[e], v);
            branch_v[e] = v;
            branch_i[e] = i;
            if a == self.adj.start {
                i_total += i;
            } else if b == self.adj.start {
                i_total -= i;
            }
            if b == self.adj.end {
                i_end += i;
            } else if a == self.adj.end {
                i_end -= i;
            }
        }
        Ok(Solution {
            potentials: phi.hi,
            branch_v,
            branch_i,
            i_total,
            i_end,
            newton_iterations,
        })
    }

    /// Largest KCL residual over all non-terminal nodes, relative to the sum
    /// of incident branch current magnitudes plus [`KCL_CURRENT_FLOOR`].
    pub fn kcl_residual(&self, state: &CircuitState) -> f64 {
        let n = self.node_count();
        let mut net = vec![0.0; n];
        let mut mag = vec![0.0; n];
        for e in 0..self.edge_count() {
            let (a, b) = self.adj.ends(e);
            let i = state.branch_i[e];
            net[a] += i;
            net[b] -= i;
            mag[a] += i.abs();
            mag[b] += i.abs();
        }
        (0..n)
            .filter(|&i| i != self.adj.start && i != self.adj.end)
            .map(|i| net[i].abs() / (mag[i] + KCL_CURRENT_FLOOR))
            .fold(0.0, f64::max)
    }

    fn rates_into(&self, x: &[f64], sol_v: &[f64], sol_i: &[f64], rates: &mut [f64]) {
        for e in 0..rates.len() {
            let r = self.devices.get(e).dxdt(x[e], sol_v[e], sol_i[e]);
            rates[e] = if (x[e] >= 1.0 && r > 0.0) || (x[e] <= 0.0 && r < 0.0) {
                0.0
            } else {
                r
            };
        }
    }

    /// State at `t = 0` with every device OFF.
    pub fn initial_state(&mut self, v_ctrl: f64, cfg: &SolverConfig) -> Result<CircuitState, SolverError> {
        self.state_from(vec![0.0; self.edge_count()], 0.0, v_ctrl, cfg)
    }

    /// State with the given device states at time `t`.
    pub fn state_from(
        &mut self,
        x: Vec<f64>,
        t: f64,
        v_ctrl: f64,
        cfg: &SolverConfig,
    ) -> Result<CircuitState, SolverError> {
        let x: Vec<f64> = x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let sol = self.solve_potentials(&x, v_ctrl, None, cfg)?;
        let mut rates = vec![0.0; x.len()];
        self.rates_into(&x, &sol.branch_v, &sol.branch_i, &mut rates);
        Ok(CircuitState {
            x,
            potentials: sol.potentials,
            branch_v: sol.branch_v,
            branch_i: sol.branch_i,
            rates,
            t,
            v_ctrl,
            i_total: sol.i_total,
            i_end: sol.i_end,
            energy: 0.0,
        })
    }

    /// Advances every device by one explicit Euler step of at most
    /// `min(cfg.dt, dt_cap)`, halving as needed. Returns the step taken and
    /// the number of halvings.
    pub fn step<F: Fn(f64) -> f64>(
        &mut self,
        state: &mut CircuitState,
        v_ctrl: &F,
        cfg: &SolverConfig,
        dt_cap: f64,
    ) -> Result<(f64, u32), SolverError> {
        let mut x_new = core::mem::take(&mut self.scratch_x);
        let mut last_err = SolverError::StepCollapse { t: state.t };
        for k in 0..=cfg.max_halvings {
            let h = (cfg.dt / f64::from(1u32 << k)).min(dt_cap);
            let mut worst: f64 = 0.0;
            for e in 0..x_new.len() {
                let xn = (state.x[e] + h * state.rates[e]).clamp(0.0, 1.0);
                worst = worst.max((xn - state.x[e]).abs());
                x_new[e] = xn;
            }
            if worst > cfg.dx_max {
                last_err = SolverError::StepCollapse { t: state.t };
                continue;
            }
            let t_new = state.t + h;
            let v_new = v_ctrl(t_new);
            let guess = if state.v_ctrl != 0.0 && v_new != 0.0 {
                let ratio = v_new / state.v_ctrl;
                Some(state.potentials.iter().map(|p| p * ratio).collect::<Vec<_>>())
            } else {
                None
            };
            match self.solve_potentials(&x_new, v_new, guess.as_deref(), cfg) {
                Ok(sol) => {
                    let p_old = state.v_ctrl * state.i_total;
                    let p_new = v_new * sol.i_total;
                    state.energy += 0.5 * h * (p_old + p_new);
                    state.x.copy_from_slice(&x_new);
                    state.t = t_new;
                    state.v_ctrl = v_new;
                    state.i_total = sol.i_total;
                    state.i_end = sol.i_end;
                    state.potentials = sol.potentials;
                    state.branch_v = sol.branch_v;
                    state.branch_i = sol.branch_i;
                    let mut rates = core::mem::take(&mut state.rates);
                    self.rates_into(&state.x, &state.branch_v, &state.branch_i, &mut rates);
                    state.rates = rates;
                    self.scratch_x = x_new;
                    return Ok((h, k));
                }
                Err(SolverError::NewtonNoConvergence { .. }) => {
                    last_err = SolverError::NewtonNoConvergence { t: state.t };
                }
                Err(e) => {
                    self.scratch_x = x_new;
                    return Err(e);
                }
            }
        }
        self.scratch_x = x_new;
        Err(last_err)
    }

    /// Steps until `stop` fires or `t_max` is reached, sampling the source
    /// current every `cfg.sample_dt`. Steps are shortened so that samples
    /// fall exactly on the sampling grid; `stop` is consulted after every
    /// sample, including the initial one.
    pub fn run_until<F, S>(
        &mut self,
        state: &mut CircuitState,
        v_ctrl: F,
        mut stop: S,
        cfg: &SolverConfig,
        t_max: f64,
    ) -> Result<RunOutcome, SolverError>
    where
        F: Fn(f64) -> f64,
        S: FnMut(&CircuitState, &CurrentTrace) -> bool,
    {
        cfg.validate()?;
        let origin = state.t;
        let mut trace = CurrentTrace::new(cfg.sample_dt);
        let mut diag = Diagnostics::default();
        let record = |state: &CircuitState, trace: &mut CurrentTrace, diag: &mut Diagnostics, me: &Self| {
            trace.samples.push(TraceSample {
                t: state.t,
                v_ctrl: state.v_ctrl,
                i_total: state.i_total,
            });
            diag.max_kcl_residual = diag.max_kcl_residual.max(me.kcl_residual(state));
            diag.max_conservation_error = diag.max_conservation_error.max(state.conservation_error());
        };
        record(state, &mut trace, &mut diag, self);
        if stop(state, &trace) {
            return Ok(RunOutcome {
                trace,
                reason: StopReason::Stopped,
                diagnostics: diag,
            });
        }
        loop {
            if state.t >= t_max - 1e-9 * cfg.sample_dt {
                return Ok(RunOutcome {
                    trace,
                    reason: StopReason::TimedOut,
                    diagnostics: diag,
                });
            }
            let next = origin + trace.len() as f64 * cfg.sample_dt;
            loop {
                let cap = next - state.t;
                let (_, halvings) = self.step(state, &v_ctrl, cfg, cap)?;
                diag.steps += 1;
                diag.halvings += u64::from(halvings);
                if (state.t - next).abs() <= 1e-9 * cfg.sample_dt {
                    state.t = next;
                    break;
                }
            }
            record(state, &mut trace, &mut diag, self);
            if stop(state, &trace) {
                return Ok(RunOutcome {
                    trace,
                    reason: StopReason::Stopped,
                    diagnostics: diag,
                });
            }
        }
    }
}
