//! Aggregates over batch records: time/energy scaling and ΔG histograms.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use mempath_core::stats::{histogram_in, linear_fit, spearman, Histogram, LinearFit};
use serde::{Deserialize, Serialize};

use crate::batch::RunRecord;
use crate::error::{Error, Result};
use crate::files::fmt_f64;

pub const MIN_SUCCESSES: usize = 20;
pub const MIN_DISTINCT_LENGTHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub records: usize,
    pub spearman_time_vs_n: f64,
    pub spearman_time_vs_size: f64,
    pub spearman_energy_vs_n: f64,
    pub spearman_energy_vs_size: f64,
    pub time_vs_n: LinearFit,
    pub time_vs_size: LinearFit,
    pub energy_vs_n: LinearFit,
    pub energy_vs_size: LinearFit,
}

/// Rank correlations and least-squares fits of detection time and energy
/// against path length and against nodes + edges, over successful records
/// that carry a detection time.
pub fn summarize_scaling(records: &[RunRecord]) -> Result<ScalingSummary> {
    let mut n = Vec::new();
    let mut size = Vec::new();
    let mut time = Vec::new();
    let mut energy = Vec::new();
    for r in records.iter().filter(|r| r.success) {
        if let (Some(len), Some(sz), Some(t), Some(e)) = (r.path_len, r.size(), r.detect_time_s, r.energy_j) {
            n.push(len as f64);
            size.push(sz as f64);
            time.push(t);
            energy.push(e);
        }
    }
    let distinct: BTreeSet<u64> = n.iter().map(|v| *v as u64).collect();
    if n.len() < MIN_SUCCESSES || distinct.len() < MIN_DISTINCT_LENGTHS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_SUCCESSES} successful ramp records over {MIN_DISTINCT_LENGTHS} path lengths, have {} over {}",
            n.len(),
            distinct.len()
        )));
    }
    let rho = |x: &[f64], y: &[f64]| spearman(x, y).unwrap_or(0.0);
    let fit =
        |x: &[f64], y: &[f64]| linear_fit(x, y).ok_or_else(|| Error::InsufficientData("degenerate regression".into()));
    Ok(ScalingSummary {
        records: n.len(),
        spearman_time_vs_n: rho(&n, &time),
        spearman_time_vs_size: rho(&size, &time),
        spearman_energy_vs_n: rho(&n, &energy),
        spearman_energy_vs_size: rho(&size, &energy),
        time_vs_n: fit(&n, &time)?,
        time_vs_size: fit(&size, &time)?,
        energy_vs_n: fit(&n, &energy)?,
        energy_vs_size: fit(&size, &energy)?,
    })
}

/// Histogram of normalized ΔG over `[-1, 1]`. Failed runs without a ΔG are
/// left out.
pub fn delta_g_histogram(records: &[RunRecord], bins: usize) -> Histogram {
    let values: Vec<f64> = records.iter().filter_map(|r| r.delta_g_norm).collect();
    histogram_in(&values, bins, -1.0, 1.0)
}

pub fn histogram_to_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", fmt_f64(h.edges[k]), fmt_f64(h.edges[k + 1]), c);
    }
    s
}
