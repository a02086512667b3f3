//! Memristor device laws.
//!
//! Two families are provided: a generic linear device whose conductance
//! interpolates between `g_off` and `g_on`, and a nonlinear filamentary
//! device (Pd/WO3/W stack) with exponential/sinh current and
//! voltage-driven state dynamics. Both share the internal state `x` in
//! `[0, 1]`.

use alloc::vec::Vec;

use libm::{cosh, exp, expm1, sinh};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Internal device state, kept in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceState(f64);

impl DeviceState {
    pub const OFF: DeviceState = DeviceState(0.0);
    pub const ON: DeviceState = DeviceState(1.0);

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn new(x: f64) -> Self {
        if x.is_nan() {
            DeviceState(0.0)
        } else {
            DeviceState(x.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Generic linear memristor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    /// ON conductance (S).
    pub g_on: f64,
    /// OFF conductance (S).
    pub g_off: f64,
    /// State gain per unit current (A⁻¹ s⁻¹).
    pub gamma: f64,
    /// Decay time constant (s).
    pub tau: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            g_on: 1e-1,
            g_off: 1e-4,
            gamma: 1e6,
            tau: 0.1,
        }
    }
}

impl LinearParams {
    pub fn is_valid(&self) -> bool {
        self.g_on > self.g_off && self.g_off > 0.0 && self.gamma > 0.0 && self.tau > 0.0
    }

    pub fn conductance(&self, x: f64) -> f64 {
        self.g_on * x + self.g_off * (1.0 - x)
    }

    pub fn current(&self, x: f64, v: f64) -> f64 {
        v * self.conductance(x)
    }

    pub fn dxdt(&self, x: f64, i: f64) -> f64 {
        self.gamma * i.abs() - x / self.tau
    }

    /// Per-device voltage above which the ON state is self-sustaining.
    pub fn turn_on_voltage(&self) -> f64 {
        1.0 / (self.gamma * self.tau * self.g_on)
    }

    /// Steady state of a single device held at voltage `v`, or `None` when
    /// the device runs away to `x = 1`.
    pub fn fixed_point(&self, v: f64) -> Option<f64> {
        let k = self.gamma * self.tau * v.abs();
        let den = 1.0 - k * (self.g_on - self.g_off);
        let x = k * self.g_off / den;
        (den > 0.0 && x < 1.0).then_some(x)
    }
}

/// Filamentary WO3 memristor with exponential drift dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangParams {
    /// Schottky-like prefactor (A).
    pub alpha: f64,
    /// Schottky-like exponent (V⁻¹).
    pub beta: f64,
    /// Tunnelling prefactor (A).
    pub gamma: f64,
    /// Tunnelling exponent (V⁻¹).
    pub delta: f64,
    /// Drift rate (s⁻¹).
    pub lambda: f64,
    /// Forward drift exponent (V⁻¹).
    pub eta1: f64,
    /// Reverse drift exponent (V⁻¹).
    pub eta2: f64,
    /// Retention time constant (s).
    pub tau: f64,
}

impl Default for ChangParams {
    fn default() -> Self {
        ChangParams {
            alpha: 5e-7,
            beta: 0.5,
            gamma: 4e-6,
            delta: 2.0,
            lambda: 4.5,
            eta1: 0.004,
            eta2: 4.0,
            tau: 10.0,
        }
    }
}

impl ChangParams {
    pub fn is_valid(&self) -> bool {
        [
            self.alpha,
            self.beta,
            self.gamma,
            self.delta,
            self.lambda,
            self.eta1,
            self.eta2,
            self.tau,
        ]
        .iter()
        .all(|&p| p > 0.0 && p.is_finite())
    }

    pub fn current(&self, x: f64, v: f64) -> f64 {
        -(1.0 - x) * self.alpha * expm1(-self.beta * v) + x * self.gamma * sinh(self.delta * v)
    }

    pub fn dcurrent_dv(&self, x: f64, v: f64) -> f64 {
        (1.0 - x) * self.alpha * self.beta * exp(-self.beta * v) + x * self.gamma * self.delta * cosh(self.delta * v)
    }

    pub fn dxdt(&self, x: f64, v: f64) -> f64 {
        self.lambda * (expm1(self.eta1 * v) - expm1(-self.eta2 * v)) - x / self.tau
    }

    /// Zero-bias small-signal conductance.
    pub fn conductance(&self, x: f64) -> f64 {
        (1.0 - x) * self.alpha * self.beta + x * self.gamma * self.delta
    }
}

/// Parameter set of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceModel {
    Linear(LinearParams),
    Chang(ChangParams),
}

impl DeviceModel {
    pub fn linear() -> Self {
        DeviceModel::Linear(LinearParams::default())
    }

    pub fn chang() -> Self {
        DeviceModel::Chang(ChangParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeviceModel::Linear(_) => "linear",
            DeviceModel::Chang(_) => "chang",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DeviceModel::Linear(_))
    }

    pub fn is_valid(&self) -> bool {
        match self {
            DeviceModel::Linear(p) => p.is_valid(),
            DeviceModel::Chang(p) => p.is_valid(),
        }
    }

    pub fn current(&self, x: f64, v: f64) -> f64 {
        match self {
            DeviceModel::Linear(p) => p.current(x, v),
            DeviceModel::Chang(p) => p.current(x, v),
        }
    }

    pub fn dcurrent_dv(&self, x: f64, v: f64) -> f64 {
        match self {
            DeviceModel::Linear(p) => p.conductance(x),
            DeviceModel::Chang(p) => p.dcurrent_dv(x, v),
        }
    }

    /// State derivative given the branch voltage and current. The linear
    /// device is current driven, the filamentary one voltage driven.
    pub fn dxdt(&self, x: f64, v: f64, i: f64) -> f64 {
        match self {
            DeviceModel::Linear(p) => p.dxdt(x, i),
            DeviceModel::Chang(p) => p.dxdt(x, v),
        }
    }

    /// Conductance used for readout: dI/dV at zero bias.
    pub fn small_signal_conductance(&self, x: f64) -> f64 {
        match self {
            DeviceModel::Linear(p) => p.conductance(x),
            DeviceModel::Chang(p) => p.conductance(x),
        }
    }

    /// Largest attainable conductance contrast, `G(1) - G(0)`.
    pub fn delta_g_max(&self) -> f64 {
        self.small_signal_conductance(1.0) - self.small_signal_conductance(0.0)
    }

    fn map_params(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        match *self {
            DeviceModel::Linear(p) => {
                let g_off = f(p.g_off);
                let g_on = f(p.g_on);
                DeviceModel::Linear(LinearParams {
                    g_on,
                    g_off,
                    gamma: f(p.gamma),
                    tau: f(p.tau),
                })
            }
            DeviceModel::Chang(p) => DeviceModel::Chang(ChangParams {
                alpha: f(p.alpha),
                beta: f(p.beta),
                gamma: f(p.gamma),
                delta: f(p.delta),
                lambda: f(p.lambda),
                eta1: f(p.eta1),
                eta2: f(p.eta2),
                tau: f(p.tau),
            }),
        }
    }
}

/// Draws `device_count` parameter sets around `nominal`.
///
/// Every scalar is drawn independently from a Gaussian with mean equal to
/// the nominal value and standard deviation `sigma_rel` times it, redrawn
/// until it lands in `[0.01, 3]` times the nominal value.
pub fn sample_varied_params(nominal: &DeviceModel, sigma_rel: f64, seed: u64, device_count: usize) -> Vec<DeviceModel> {
    if sigma_rel <= 0.0 {
        return alloc::vec![*nominal; device_count];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    (0..device_count)
        .map(|_| {
            nominal.map_params(|p| loop {
                let draw = p * (1.0 + sigma_rel * unit.sample(&mut rng));
                if draw >= 0.01 * p && draw <= 3.0 * p {
                    break draw;
                }
            })
        })
        .collect()
}

/// Per-edge device parameters plus the nominal set they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Devices {
    nominal: DeviceModel,
    params: Vec<DeviceModel>,
}

impl Devices {
    pub fn uniform(model: DeviceModel, count: usize) -> Self {
        Devices {
            nominal: model,
            params: alloc::vec![model; count],
        }
    }

    pub fn varied(nominal: DeviceModel, sigma_rel: f64, seed: u64, count: usize) -> Self {
        Devices {
            nominal,
            params: sample_varied_params(&nominal, sigma_rel, seed, count),
        }
    }

    pub fn nominal(&self) -> &DeviceModel {
        &self.nominal
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, edge: usize) -> &DeviceModel {
        &self.params[edge]
    }

    pub fn as_slice(&self) -> &[DeviceModel] {
        &self.params
    }

    pub fn all_linear(&self) -> bool {
        self.params.iter().all(DeviceModel::is_linear)
    }

    pub fn conductance(&self, edge: usize, x: f64) -> f64 {
        self.params[edge].small_signal_conductance(x)
    }
}
