//! Experiment configuration, read from TOML.
//!
//! ```toml
//! master_seed = 7
//! instance_count = 100
//!
//! [topology]
//! kind = "grid"
//! sides = [6, 8, 10, 12]
//! removal_prob = [0.2, 0.3, 0.4]
//!
//! [model]
//! kind = "chang"
//! tau = 12.0
//!
//! [protocol]
//! kind = "ramp"
//! rate = 1e-3
//!
//! [output]
//! records = "records.csv"
//! ```

use std::path::{Path, PathBuf};

use mempath_core::graph::GeneratorOptions;
use mempath_core::protocols::{default_constant_t_max, default_solver_config};
use mempath_core::{DeviceModel, KinkDetectorConfig, RampConfig, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Position, Result};
use crate::files::read_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub instance_count: usize,
    pub topology: TopologySpec,
    #[serde(default = "DeviceModel::linear")]
    pub model: DeviceModel,
    /// Relative standard deviation of every device parameter.
    #[serde(default)]
    pub sigma_rel: f64,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Instance family. Each instance draws its parameters uniformly from the
/// listed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Grid {
        /// Square grid side lengths.
        sides: Vec<u32>,
        removal_prob: Vec<f64>,
        #[serde(default)]
        min_path_len: Option<usize>,
        #[serde(default)]
        max_path_len: Option<usize>,
    },
    SmallWorld {
        n: Vec<u32>,
        k: Vec<u32>,
        beta: Vec<f64>,
        #[serde(default)]
        min_path_len: Option<usize>,
        #[serde(default)]
        max_path_len: Option<usize>,
    },
}

impl TopologySpec {
    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::Grid { .. } => "grid",
            TopologySpec::SmallWorld { .. } => "small_world",
        }
    }

    pub fn generator_options(&self) -> GeneratorOptions {
        let (lo, hi) = match self {
            TopologySpec::Grid {
                min_path_len,
                max_path_len,
                ..
            }
            | TopologySpec::SmallWorld {
                min_path_len,
                max_path_len,
                ..
            } => (*min_path_len, *max_path_len),
        };
        let d = GeneratorOptions::default();
        GeneratorOptions {
            min_path_len: lo.unwrap_or(d.min_path_len),
            max_path_len: hi.unwrap_or(d.max_path_len),
            ..d
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("topology: {m}")));
        let prob_ok = |p: &f64| (0.0..1.0).contains(p);
        match self {
            TopologySpec::Grid {
                sides, removal_prob, ..
            } => {
                if sides.is_empty() || removal_prob.is_empty() {
                    return fail("sides and removal_prob must be non-empty");
                }
                if sides.iter().any(|&s| s < 2) {
                    return fail("grid sides must be at least 2");
                }
                if !removal_prob.iter().all(prob_ok) {
                    return fail("removal_prob must lie in [0, 1)");
                }
            }
            TopologySpec::SmallWorld { n, k, beta, .. } => {
                if n.is_empty() || k.is_empty() || beta.is_empty() {
                    return fail("n, k and beta must be non-empty");
                }
                if !beta.iter().all(|b| (0.0..=1.0).contains(b)) {
                    return fail("beta must lie in [0, 1]");
                }
            }
        }
        let o = self.generator_options();
        if o.min_path_len > o.max_path_len {
            return fail("min_path_len exceeds max_path_len");
        }
        Ok(())
    }
}

/// Protocol selection; unset ramp fields take the model's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    Ramp {
        #[serde(default)]
        v0: Option<f64>,
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        window: Option<usize>,
        #[serde(default)]
        threshold: Option<f64>,
        #[serde(default)]
        warmup: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
    Constant {
        v_ctrl: f64,
        #[serde(default)]
        t_max: Option<f64>,
    },
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec::Ramp {
            v0: None,
            rate: None,
            window: None,
            threshold: None,
            warmup: None,
            t_max: None,
        }
    }
}

/// A fully specified protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    Ramp(RampConfig),
    Constant { v_ctrl: f64, t_max: f64 },
}

impl ProtocolSpec {
    pub fn resolve(&self, model: &DeviceModel, solver: &SolverConfig) -> Result<Protocol> {
        let p = match *self {
            ProtocolSpec::Ramp {
                v0,
                rate,
                window,
                threshold,
                warmup,
                t_max,
            } => {
                let base = RampConfig::for_model(model);
                let det = KinkDetectorConfig::for_sample_dt(solver.sample_dt);
                let ramp = RampConfig {
                    v0: v0.unwrap_or(base.v0),
                    rate: rate.unwrap_or(base.rate),
                    detector: KinkDetectorConfig {
                        window: window.unwrap_or(det.window),
                        threshold: threshold.unwrap_or(det.threshold),
                        warmup: warmup.unwrap_or(det.warmup),
                    },
                    t_max: t_max.unwrap_or(base.t_max),
                };
                if !ramp.is_valid() {
                    return Err(Error::Config(format!(
                        "ramp needs rate > 0, v0 >= 0, t_max > 0, an odd window >= 3, threshold < 0 and warmup >= 0: {ramp:?}"
                    )));
                }
                Protocol::Ramp(ramp)
            }
            ProtocolSpec::Constant { v_ctrl, t_max } => {
                let t_max = t_max.unwrap_or_else(|| default_constant_t_max(model));
                if !(v_ctrl.is_finite() && t_max > 0.0) {
                    return Err(Error::Config(
                        "constant protocol needs a finite v_ctrl and t_max > 0".into(),
                    ));
                }
                Protocol::Constant { v_ctrl, t_max }
            }
        };
        Ok(p)
    }
}

/// Optional replacements for the model's default solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub dt: Option<f64>,
    pub dx_max: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<u32>,
    pub sample_dt: Option<f64>,
    pub max_halvings: Option<u32>,
    pub kcl_rel_tol: Option<f64>,
}

impl SolverOverrides {
    pub fn resolve(&self, model: &DeviceModel) -> Result<SolverConfig> {
        let d = default_solver_config(model);
        let cfg = SolverConfig {
            dt: self.dt.unwrap_or(d.dt),
            dx_max: self.dx_max.unwrap_or(d.dx_max),
            newton_tol: self.newton_tol.unwrap_or(d.newton_tol),
            newton_max_iter: self.newton_max_iter.unwrap_or(d.newton_max_iter),
            sample_dt: self.sample_dt.unwrap_or(d.sample_dt),
            max_halvings: self.max_halvings.unwrap_or(d.max_halvings),
            kcl_rel_tol: self.kcl_rel_tol.unwrap_or(d.kcl_rel_tol),
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub records: Option<PathBuf>,
    /// Histogram of normalized ΔG.
    pub histogram: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            records: None,
            histogram: None,
            summary: None,
            bins: default_bins(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Malformed {
            path: origin.to_path_buf(),
            position: e.span().map(|s| position_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_count == 0 {
            return Err(Error::Config("instance_count must be at least 1".into()));
        }
        if !self.model.is_valid() {
            return Err(Error::Config(format!(
                "model parameters must be positive: {:?}",
                self.model
            )));
        }
        if !(self.sigma_rel >= 0.0 && self.sigma_rel.is_finite()) {
            return Err(Error::Config("sigma_rel must be a finite non-negative number".into()));
        }
        if self.output.bins == 0 {
            return Err(Error::Config("output.bins must be at least 1".into()));
        }
        self.topology.validate()?;
        let solver = self.solver_config()?;
        self.protocol.resolve(&self.model, &solver)?;
        Ok(())
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        self.solver.resolve(&self.model)
    }

    pub fn resolved_protocol(&self) -> Result<Protocol> {
        self.protocol.resolve(&self.model, &self.solver_config()?)
    }
}

fn position_of(text: &str, offset: usize) -> Position {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    Position { line, column }
}
