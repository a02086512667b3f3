//! File formats, batch experiments and the command-line front end for
//! [`mempath_core`].

pub mod batch;
pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod summary;

pub use batch::{run_batch, run_batch_with, BatchPlan, FailureKind, RunRecord};
pub use config::{ExperimentConfig, Protocol, ProtocolSpec, TopologySpec};
pub use error::{Error, Result};
pub use files::{load_graph, load_result, save_graph, save_result, RunResult};
pub use summary::{summarize_scaling, ScalingSummary};
