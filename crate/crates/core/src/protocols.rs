//! Control strategies: a constant voltage held until the devices settle,
//! and a linear voltage ramp halted by a curvature detector on the source
//! current.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, PathOracle};
use crate::models::DeviceModel;
use crate::readout::{compute_delta_g, PathMetrics};
use crate::solver::{Circuit, CircuitState, CurrentTrace, Diagnostics, SolverConfig, SolverError, StopReason};

/// Devices are considered settled once no state moves faster than this (s⁻¹).
pub const STEADY_RATE: f64 = 1e-6;

const CURVATURE_PER_SAMPLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinkDetectorConfig {
    /// Moving-average width in samples (odd, at least 3).
    pub window: usize,
    /// Trigger level for the second derivative divided by the latest
    /// smoothed current (s⁻²). Negative.
    pub threshold: f64,
    /// Time before the detector is armed (s).
    pub warmup: f64,
}

impl KinkDetectorConfig {
    /// Defaults for a trace sampled every `sample_dt`: a 5-sample window, ten
    /// sample periods of warm-up, and a threshold of −10⁻⁶ per sample
    /// period squared (−0.01 s⁻² at 10 ms, −10⁻⁴ s⁻² at 100 ms).
    pub fn for_sample_dt(sample_dt: f64) -> Self {
        KinkDetectorConfig {
            window: 5,
            threshold: -CURVATURE_PER_SAMPLE / (sample_dt * sample_dt),
            warmup: 10.0 * sample_dt,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.window >= 3 && self.window % 2 == 1 && self.threshold < 0.0 && self.warmup >= 0.0
    }
}

/// Online curvature detector.
///
/// Each new sample completes one more centred moving average; once three
/// consecutive averages exist, their central second difference is divided
/// by the newest average and compared with the threshold. A trigger needs a
/// drop: the normalized curvature must first have exceeded `-threshold`
/// (the convex run-up), so a current that only ever relaxes is never
/// reported. The index reported is the sample at which the curvature was
/// evaluated, which lags the newest sample by `window / 2 + 1`.
#[derive(Debug, Clone)]
pub struct KinkDetector {
    cfg: KinkDetectorConfig,
    sample_dt: f64,
    warmup_samples: usize,
    raw: Vec<f64>,
    smooth: Vec<f64>,
    rising: bool,
    fired: Option<usize>,
}

impl KinkDetector {
    pub fn new(cfg: KinkDetectorConfig, sample_dt: f64) -> Self {
        let warmup_samples = libm::ceil(cfg.warmup / sample_dt - 1e-9).max(0.0) as usize;
        KinkDetector {
            cfg,
            sample_dt,
            warmup_samples,
            raw: Vec::new(),
            smooth: Vec::new(),
            rising: false,
            fired: None,
        }
    }

    /// Samples between the evaluated index and the newest sample.
    pub fn latency(&self) -> usize {
        self.cfg.window / 2 + 1
    }

    pub fn fired(&self) -> Option<usize> {
        self.fired
    }

    /// Feeds one sample; returns the detection index the first time the
    /// trigger condition holds.
    pub fn push(&mut self, current: f64) -> Option<usize> {
        self.raw.push(current);
        let w = self.cfg.window;
        let h = w / 2;
        let n = self.raw.len();
        if n < w {
            return None;
        }
        let mean = self.raw[n - w..].iter().sum::<f64>() / w as f64;
        self.smooth.push(mean);
        if self.fired.is_some() || self.smooth.len() < 3 {
            return None;
        }
        let s = &self.smooth[self.smooth.len() - 3..];
        // smooth[k] is centred on raw index k + h.
        let j = self.smooth.len() - 2 + h;
        if !(s[2] > 0.0) {
            return None;
        }
        let curvature = (s[2] - 2.0 * s[1] + s[0]) / (self.sample_dt * self.sample_dt) / s[2];
        if curvature > -self.cfg.threshold {
            self.rising = true;
        } else if self.rising && j >= self.warmup_samples && curvature < self.cfg.threshold {
            self.fired = Some(j);
            return Some(j);
        }
        None
    }
}

/// Offline form of [`KinkDetector`]: first detection index in `trace`.
pub fn detect_kink(trace: &CurrentTrace, cfg: &KinkDetectorConfig) -> Option<usize> {
    if trace.len() < cfg.window + 4 {
        return None;
    }
    let mut det = KinkDetector::new(*cfg, trace.sample_dt);
    trace.samples.iter().find_map(|s| det.push(s.i_total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    /// Voltage at `t = 0` (V).
    pub v0: f64,
    /// Ramp slope (V/s).
    pub rate: f64,
    pub detector: KinkDetectorConfig,
    pub t_max: f64,
}

impl RampConfig {
    /// 0.1 mV start, 0.5 mV/s, 50 s budget.
    pub fn linear_default() -> Self {
        RampConfig {
            v0: 1e-4,
            rate: 5e-4,
            detector: KinkDetectorConfig::for_sample_dt(SolverConfig::linear_default().sample_dt),
            t_max: 50.0,
        }
    }

    /// 0 V start, 1 mV/s, 200 s budget.
    pub fn chang_default() -> Self {
        RampConfig {
            v0: 0.0,
            rate: 1e-3,
            detector: KinkDetectorConfig::for_sample_dt(SolverConfig::chang_default().sample_dt),
            t_max: 200.0,
        }
    }

    pub fn for_model(model: &DeviceModel) -> Self {
        if model.is_linear() {
            Self::linear_default()
        } else {
            Self::chang_default()
        }
    }

    pub fn voltage(&self, t: f64) -> f64 {
        self.v0 + self.rate * t
    }

    pub fn is_valid(&self) -> bool {
        self.rate > 0.0 && self.v0 >= 0.0 && self.t_max > 0.0 && self.detector.is_valid()
    }
}

/// Ramp budget for `model`.
pub fn default_t_max(model: &DeviceModel) -> f64 {
    RampConfig::for_model(model).t_max
}

/// Constant-voltage budget for `model`: 10⁴ state time constants. Near the
/// turn-on threshold the path devices approach ON only on a 10²·τ scale.
pub fn default_constant_t_max(model: &DeviceModel) -> f64 {
    match model {
        DeviceModel::Linear(p) => 1e4 * p.tau,
        DeviceModel::Chang(p) => 1e4 * p.tau,
    }
}

pub fn default_solver_config(model: &DeviceModel) -> SolverConfig {
    if model.is_linear() {
        SolverConfig::linear_default()
    } else {
        SolverConfig::chang_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Trace index at which the curvature crossed the threshold.
    pub kink_index: usize,
    pub kink_time: f64,
    /// Time at which the source was switched off.
    pub halt_time: f64,
}

#[derive(Debug, Clone)]
pub struct RampOutcome {
    /// Frozen state at the halt.
    pub state: CircuitState,
    pub trace: CurrentTrace,
    pub diagnostics: Diagnostics,
    /// `None` when `t_max` passed without a trigger.
    pub detection: Option<Detection>,
}

#[derive(Debug, Clone)]
pub struct ConstantOutcome {
    pub state: CircuitState,
    pub trace: CurrentTrace,
    pub diagnostics: Diagnostics,
    /// `TimedOut` when the devices had not settled by `t_max`.
    pub reason: StopReason,
}

/// Holds `v_ctrl` until every device settles or `t_max` passes.
pub fn run_constant(
    circuit: &mut Circuit,
    v_ctrl: f64,
    cfg: &SolverConfig,
    t_max: f64,
) -> Result<ConstantOutcome, SolverError> {
    let mut state = circuit.initial_state(v_ctrl, cfg)?;
    let out = circuit.run_until(&mut state, |_| v_ctrl, |s, _| s.max_rate() < STEADY_RATE, cfg, t_max)?;
    Ok(ConstantOutcome {
        state,
        trace: out.trace,
        diagnostics: out.diagnostics,
        reason: out.reason,
    })
}

/// Ramps the control voltage and stops the moment the detector fires. The
/// returned state is exactly the state at the halt.
pub fn run_ramp(circuit: &mut Circuit, ramp: &RampConfig, cfg: &SolverConfig) -> Result<RampOutcome, SolverError> {
    if !ramp.is_valid() {
        return Err(SolverError::InvalidConfig(alloc::format!("{ramp:?}")));
    }
    let mut state = circuit.initial_state(ramp.voltage(0.0), cfg)?;
    let mut detector = KinkDetector::new(ramp.detector, cfg.sample_dt);
    let out = circuit.run_until(
        &mut state,
        |t| ramp.voltage(t),
        |s, _| detector.push(s.i_total).is_some(),
        cfg,
        ramp.t_max,
    )?;
    let detection = match (out.reason, detector.fired()) {
        (StopReason::Stopped, Some(j)) => Some(Detection {
            kink_index: j,
            kink_time: out.trace.samples[j].t,
            halt_time: state.t,
        }),
        _ => None,
    };
    Ok(RampOutcome {
        state,
        trace: out.trace,
        diagnostics: out.diagnostics,
        detection,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub v_ctrl: f64,
    pub metrics: PathMetrics,
    pub reason: StopReason,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSweep {
    /// Voltage with the highest ΔG; the lowest such voltage on ties.
    pub v_opt: f64,
    pub curve: Vec<SweepPoint>,
}

/// Runs [`run_constant`] at every voltage of `v_grid` and scores each
/// settled state against the oracle path.
pub fn sweep_optimal_voltage(
    graph: &Graph,
    circuit: &mut Circuit,
    oracle: &PathOracle,
    v_grid: &[f64],
    cfg: &SolverConfig,
    t_max: f64,
) -> Result<VoltageSweep, SolverError> {
    if v_grid.is_empty() {
        return Err(SolverError::InvalidConfig("empty voltage grid".into()));
    }
    let mut curve = Vec::with_capacity(v_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &v in v_grid {
        let out = run_constant(circuit, v, cfg, t_max)?;
        let metrics = compute_delta_g(graph, &out.state.x, circuit.devices(), oracle);
        if best.is_none_or(|(_, g)| metrics.delta_g > g) {
            best = Some((v, metrics.delta_g));
        }
        curve.push(SweepPoint {
            v_ctrl: v,
            metrics,
            reason: out.reason,
            diagnostics: out.diagnostics,
        });
    }
    Ok(VoltageSweep {
        v_opt: best.map(|(v, _)| v).unwrap_or(v_grid[0]),
        curve,
    })
}
