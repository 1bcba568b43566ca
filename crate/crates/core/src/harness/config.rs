//! Harness configuration, loadable from TOML. Every field has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::CostConstants;
use crate::risky_gate::GateConfig;

use super::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    /// Base seed; repetition `r` uses `seed + r` for workload and probe draws.
    pub seed: u64,
    pub reps: usize,
    /// Leading share of each stream left out of latency percentiles.
    pub warmup_fraction: f64,
    pub n_sample: usize,
    pub cache: bool,
    /// Size each backend's probe by what its cost model affords in `budget_ms`.
    pub equal_latency_budget: bool,
    pub budget_ms: f64,
    /// Parallelism factor of the parallel backend's cost model. Only consulted in
    /// equal-latency-budget mode; `None` uses the worker thread count.
    pub parallel_factor: Option<f64>,
    /// Compare every chosen plan with the exact-cardinality plan.
    pub track_oracle: bool,
    /// Attach plan explain text to every record.
    pub explain: bool,
    pub gate: GateConfig,
    pub costs: CostConstants,
    pub scenario: ScenarioConfig,
    pub sweep_d: Vec<f64>,
    pub cv_budgets: Vec<usize>,
    pub cv_reps: usize,
    pub overhead_samples: Vec<usize>,
    pub speedup_n: Vec<usize>,
    pub speedup_k: Vec<usize>,
    pub speedup_m: Vec<usize>,
    pub timing_reps: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            seed: 1,
            reps: 3,
            warmup_fraction: 0.05,
            n_sample: 8192,
            cache: false,
            equal_latency_budget: false,
            budget_ms: 0.86,
            parallel_factor: None,
            track_oracle: true,
            explain: false,
            gate: GateConfig::default(),
            costs: CostConstants::default(),
            scenario: ScenarioConfig::default(),
            sweep_d: vec![0.15, 0.20, 0.25, 0.30, 0.35],
            cv_budgets: vec![1_000, 4_000, 16_000],
            cv_reps: 200,
            overhead_samples: vec![256, 1_000, 4_000, 16_000, 64_000],
            speedup_n: vec![10_000, 100_000, 1_000_000],
            speedup_k: vec![1, 4, 16],
            speedup_m: vec![1, 4, 16],
            timing_reps: 3,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        if self.n_sample == 0 || !(self.budget_ms > 0.0) {
            return Err(Error::Config("n_sample and budget_ms must be positive".into()));
        }
        if self.cv_reps < 2 || self.timing_reps == 0 {
            return Err(Error::Config("cv_reps >= 2 and timing_reps >= 1 required".into()));
        }
        self.gate.validate()?;
        self.scenario.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
