//! Shortest-path computation with circuits of memristors.
//!
//! Each edge of a graph is a memristor and each node a junction. A voltage
//! across the start and end nodes drives current through the network; the
//! devices on the shortest path carry the most current, grow more
//! conductive, and draw still more current until they switch ON. The path
//! is then read out by following the most conductive device out of each
//! node.
//!
//! The crate is `no_std` (with `alloc`) and contains no I/O:
//!
//! - [`graph`]: problem generators, pruning, orientation and the BFS oracle
//! - [`models`]: device laws and parameter variability
//! - [`solver`]: nodal analysis and time stepping with energy accounting
//! - [`protocols`]: constant-voltage and ramp control with kink detection
//! - [`readout`]: greedy path readout and the conductance-margin metric
//! - [`stats`]: correlations, fits and histograms for batch summaries

#![no_std]

extern crate alloc;

pub mod graph;
pub mod models;
pub mod protocols;
pub mod readout;
pub mod solver;
mod sparse;
pub mod stats;

pub use graph::{
    bfs_oracle, generate_grid, generate_grid_with, generate_small_world, generate_small_world_with, prune, Edge,
    EdgeId, GeneratorOptions, Graph, GraphError, NodeId, PathOracle,
};
pub use models::{ChangParams, DeviceModel, DeviceState, Devices, LinearParams};
pub use protocols::{
    detect_kink, run_constant, run_ramp, sweep_optimal_voltage, KinkDetector, KinkDetectorConfig, RampConfig,
};
pub use readout::{compute_delta_g, read_path, verify_against_oracle, PathMetrics, ReadoutError};
pub use solver::{Circuit, CircuitState, CurrentTrace, SolverConfig, SolverError, StopReason};

/// SplitMix64 finaliser, used to derive independent per-instance seeds.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
