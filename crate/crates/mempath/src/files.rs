//! On-disk formats: graph documents (JSON), run results (JSON) and current
//! traces (CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mempath_core::solver::CurrentTrace;
use mempath_core::{Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Position, Result};

pub const TRACE_HEADER: &str = "t_s,v_ctrl_V,i_total_A";

/// Canonical text form of a graph: nodes and edges sorted by id.
pub fn graph_to_string(graph: &Graph) -> String {
    let mut g = graph.clone();
    g.canonicalize();
    let mut s = serde_json::to_string_pretty(&g).expect("graphs always serialize");
    s.push('\n');
    s
}

/// Parses and validates a graph document. `origin` is only used in error
/// messages.
pub fn parse_graph(text: &str, origin: &Path) -> Result<Graph> {
    let mut g: Graph = serde_json::from_str(text).map_err(|e| Error::Malformed {
        path: origin.to_path_buf(),
        position: (e.line() > 0).then(|| Position {
            line: e.line(),
            column: e.column(),
        }),
        message: e.to_string(),
    })?;
    g.canonicalize();
    g.validate().map_err(|e| Error::Malformed {
        path: origin.to_path_buf(),
        position: None,
        message: e.to_string(),
    })?;
    Ok(g)
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    write_text(path, &graph_to_string(graph))
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    parse_graph(&read_text(path)?, path)
}

/// Outcome of one protocol run on one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub read_path: Vec<NodeId>,
    pub delta_g: f64,
    pub delta_g_max: f64,
    pub normalized: f64,
    pub success: bool,
    /// Halt time of a ramp run; absent for constant-voltage runs and failed
    /// detections.
    pub detection_time_s: Option<f64>,
    #[serde(rename = "energy_J")]
    pub energy_j: f64,
}

pub fn save_result(result: &RunResult, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(result).expect("results always serialize");
    s.push('\n');
    write_text(path, &s)
}

pub fn load_result(path: &Path) -> Result<RunResult> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        position: Some(Position {
            line: e.line(),
            column: e.column(),
        }),
        message: e.to_string(),
    })
}

/// Full-precision float formatting shared by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_to_csv(trace: &CurrentTrace) -> String {
    let mut s = String::with_capacity(64 * (trace.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for p in &trace.samples {
        let _ = writeln!(s, "{},{},{}", fmt_f64(p.t), fmt_f64(p.v_ctrl), fmt_f64(p.i_total));
    }
    s
}

pub fn save_trace(trace: &CurrentTrace, path: &Path) -> Result<()> {
    write_text(path, &trace_to_csv(trace))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
