//! Scenario runner for the robust CLF/CBF controllers: TOML scenarios in,
//! per-tick CSV and metrics JSON out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;
pub mod suite;
pub mod validate;

/// Environment variable naming the root directory for scenario outputs.
pub const OUTPUT_ROOT_ENV: &str = "RQP_OUTPUT_ROOT";

pub use config::ScenarioConfig;
pub use runner::{dump_qp, run, run_scenario, RunMetrics, RunOutput};
pub use suite::{run_suite, summary_table};
pub use validate::{validate, ValidateOptions};
