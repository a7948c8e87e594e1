//! Scenario generation, the control loop, baselines and output files.

pub mod config;
pub mod env;
pub mod report;
pub mod runner;
pub mod trace;

pub use config::{Method, ScenarioConfig};
pub use env::{build_scenario, draw_round_environment, Scenario};
pub use report::{emit_outputs, summarize, RunSummary};
pub use runner::{run, run_baseline, run_fedrt, run_observed, RoundSnapshot};
pub use trace::RoundTrace;
