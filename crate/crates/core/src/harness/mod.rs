//! Experiment orchestration: scenarios, methods, metrics and reports.

pub mod calibrate;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod scenario;

pub use config::HarnessConfig;
pub use metrics::{percentile, summarize, LatencySummary, MethodMetrics};
pub use scenario::{build_scenario, Regime, Scenario, ScenarioConfig, StatsLevel};
pub use experiments::{run_experiment, ExperimentId, ExperimentOutput, ExperimentSpec, Method};
pub use report::{emit_report, read_records, read_summary, summarize_records, ReportPaths, SummaryDocument};
pub use calibrate::{calibrate, Calibration};
