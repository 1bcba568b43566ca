//! Fits the probe cost model per backend and the cost-unit to millisecond scale.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{self, Backend};
use crate::error::{Error, Result};
use crate::optimizer::{exact_candidates, execute};
use crate::risky_gate::{calibrate_cost_model, GridPoint, ProbeCostModel};

use super::config::HarnessConfig;
use super::experiments::timing_request;
use super::metrics::median;
use super::scenario::{build_scenario, Regime, StatsLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub serial: ProbeCostModel,
    pub parallel: ProbeCostModel,
    /// Ratio of the fitted evaluation coefficients, serial over parallel.
    pub parallel_factor: f64,
    pub ms_per_unit: f64,
    pub plan_points: usize,
}

pub fn default_grid() -> Vec<GridPoint> {
    let mut g = Vec::new();
    for n in [2_048, 8_192, 32_768] {
        for (k, m) in [(1, 1), (2, 3), (4, 4), (8, 8)] {
            g.push(GridPoint { n_sample: n, k, m });
        }
    }
    g
}

/// Runs the calibration on the stable and unstable data of `cfg`.
pub fn calibrate(cfg: &HarnessConfig, grid: &[GridPoint], plan_queries: usize) -> Result<Calibration> {
    let stable = build_scenario(Regime::Stable, StatsLevel::Default, &cfg.scenario)?;
    let table = stable.catalog.table("orders")?;
    let fit = |backend: Backend| -> Result<ProbeCostModel> {
        let mut timer = |p: GridPoint| -> Result<f64> {
            let req = timing_request(table, p.n_sample.min(table.n_rows()), p.k, p.m, cfg.seed)?;
            let mut ts = Vec::with_capacity(cfg.timing_reps);
            for r in 0..cfg.timing_reps {
                let mut rq = req.clone();
                rq.seed = rq.seed.wrapping_add(r as u64);
                ts.push(engine::probe(table, &rq, backend)?.timers.total_ms);
            }
            median(&ts)
        };
        calibrate_cost_model(&mut timer, grid)
    };
    let serial = fit(Backend::Serial)?;
    let parallel = fit(Backend::Parallel)?;
    let parallel_factor = if parallel.eval_ms_per_row_pred > 0.0 {
        (serial.eval_ms_per_row_pred / parallel.eval_ms_per_row_pred).max(1.0)
    } else {
        1.0
    };

    // every candidate of a query sample, timed against its exact cost
    let unstable = build_scenario(Regime::Unstable, StatsLevel::Default, &cfg.scenario)?;
    let (mut sxy, mut sxx, mut points) = (0.0, 0.0, 0usize);
    for sc in [&stable, &unstable] {
        for q in sc.queries.iter().take(plan_queries) {
            let left = sc.catalog.table(&q.table)?;
            for c in exact_candidates(&sc.catalog, q, &cfg.costs)? {
                let t = Instant::now();
                execute(&c.kind, q, left, None)?;
                let ms = t.elapsed().as_secs_f64() * 1e3;
                sxy += c.est_cost * ms;
                sxx += c.est_cost * c.est_cost;
                points += 1;
            }
        }
    }
    if sxx == 0.0 {
        return Err(Error::SingularFit("no plan timings collected".into()));
    }
    Ok(Calibration {
        serial,
        parallel,
        parallel_factor,
        ms_per_unit: sxy / sxx,
        plan_points: points,
    })
}
