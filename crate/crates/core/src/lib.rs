//! Risk-gated cardinality estimation: synthetic data, histogram statistics,
//! a cheap risk gate, sampled measurement backends, a probe cache and an
//! experiment harness around a small cost-based optimizer.

pub mod datagen;
pub mod engine;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod probe_cache;
pub mod query;
pub mod risky_gate;
pub mod stats;
pub mod table;

pub use engine::{probe, Backend, ProbeRequest, ProbeResult, SampleMode};
pub use error::{Error, Result};
pub use optimizer::{Catalog, PlanRecord, Session, SessionConfig};
pub use probe_cache::ProbeCache;
pub use query::{CmpOp, JoinSpec, Predicate, Query};
pub use risky_gate::{evaluate_gate, GateConfig, GateDecision};
pub use stats::StatsSnapshot;
pub use table::ColumnTable;
