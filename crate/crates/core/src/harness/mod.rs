//! Experiment harness: configuration, sweeps, baseline, reports and timing.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{Algorithm, ExperimentConfig, Family, Layout, SweepParam};
pub use experiment::{bound_check, build_scenario, run_experiment, wmmse_static, ExperimentReport, ReportRow, Scenario, ScenarioSpec};
pub use report::{emit_report, load_json, write_csv, write_json, CSV_HEADER};
