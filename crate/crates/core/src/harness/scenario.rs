//! Data, statistics and query streams for each experiment regime.

use serde::{Deserialize, Serialize};

use crate::datagen::{build_table, gen_workload, ColumnDist, ColumnSpec, PredicateTemplate, TableSpec, ValueDraw, WorkloadKind, WorkloadSpec, JoinTemplate};
use crate::error::{Error, Result};
use crate::optimizer::Catalog;
use crate::query::Query;
use crate::stats::{Mutation, StatsSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Fresh statistics; a small share of queries lands on a correlated pocket.
    Stable,
    /// Statistics predate a shift of the correlated day mass.
    Unstable,
    /// The unstable data with the day predicate swept over its domain.
    BindSweep,
    /// Two-table join whose filter column drifted after analysis.
    Join,
}

/// Which statistics the optimizer is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsLevel {
    Default,
    High,
    /// Default histograms plus a (status, day) pair frequency list.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_rows: usize,
    pub rho: f64,
    pub data_seed: u64,
    pub n_queries: usize,
    pub workload_seed: u64,
    pub stats_resolution: usize,
    pub high_stats_resolution: usize,
    pub mcv_count: usize,
    pub extended_pairs: usize,
    /// Share of stable queries that hit the correlated pocket.
    pub pocket_fraction: f64,
    /// Status value bound by the Q_SC template.
    pub status: i64,
    pub range_width: i64,
    pub sweep_steps: usize,
    pub join_right_rows: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_rows: 1_000_000,
            rho: 0.8,
            data_seed: 42,
            n_queries: 600,
            workload_seed: 7,
            stats_resolution: 32,
            high_stats_resolution: 256,
            mcv_count: 8,
            extended_pairs: 64,
            pocket_fraction: 0.04,
            status: 0,
            range_width: 7,
            sweep_steps: 20,
            join_right_rows: 100_000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 1024 || self.n_queries == 0 {
            return Err(Error::Config("need n_rows >= 1024 and n_queries >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.pocket_fraction) {
            return Err(Error::Config("rho and pocket_fraction must be in [0, 1]".into()));
        }
        if self.range_width < 1 || self.sweep_steps == 0 {
            return Err(Error::Config("range_width and sweep_steps must be >= 1".into()));
        }
        Ok(())
    }
}

pub const DAY_DOMAIN: i64 = 365;

/// Loaded tables, statistics and the query stream of one regime.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub regime: Regime,
    pub catalog: Catalog,
    pub workload: WorkloadSpec,
    pub queries: Vec<Query>,
}

impl Scenario {
    /// The query stream for another workload seed over the same data.
    pub fn queries_for_seed(&self, seed: u64) -> Result<Vec<Query>> {
        let spec = WorkloadSpec { seed, ..self.workload.clone() };
        let left = self.catalog.table(&spec.table)?;
        let right = match &spec.join {
            Some(j) => Some(self.catalog.table(&j.right_table)?),
            None => None,
        };
        gen_workload(&spec, left, right)
    }
}

fn analyze(table: &crate::table::ColumnTable, cols: &[&str], level: StatsLevel, cfg: &ScenarioConfig) -> Result<StatsSnapshot> {
    let res = match level {
        StatsLevel::High => cfg.high_stats_resolution,
        _ => cfg.stats_resolution,
    };
    let mut snap = StatsSnapshot::analyze(table, cols, res, cfg.mcv_count)?;
    if level == StatsLevel::Extended && cols.len() >= 2 {
        snap.add_extended(table, cols[0], cols[1], cfg.extended_pairs)?;
    }
    Ok(snap)
}

fn qsc_spec(cfg: &ScenarioConfig, day: PredicateTemplate) -> WorkloadSpec {
    WorkloadSpec {
        kind: WorkloadKind::QSc,
        table: "orders".into(),
        n_queries: cfg.n_queries,
        seed: cfg.workload_seed,
        predicates: vec![
            PredicateTemplate::Equality {
                column: "status".into(),
                value: ValueDraw::Choice { values: vec![cfg.status] },
            },
            day,
        ],
        join: None,
    }
}

/// Moves all correlated day mass (days `0..8`) uniformly over twice the domain.
pub fn day_shift() -> Vec<Mutation> {
    (0..8)
        .map(|v| Mutation::Reassign {
            column: "day".into(),
            from: v,
            fraction: 1.0,
            to: ValueDraw::Uniform { lo: 0, hi: 2 * DAY_DOMAIN - 1 },
            seed: 1000 + v as u64,
        })
        .collect()
}

pub fn build_scenario(regime: Regime, level: StatsLevel, cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut catalog = Catalog::new();
    let workload;
    match regime {
        Regime::Stable | Regime::Unstable | Regime::BindSweep => {
            let table = build_table(&TableSpec::orders(cfg.n_rows, cfg.rho, cfg.data_seed))?;
            let stats = analyze(&table, &["status", "day"], level, cfg)?;
            catalog.insert(table, stats);
            let w = cfg.range_width;
            let day = match regime {
                Regime::Stable => {
                    // the pocket range starts on the last correlated day
                    let mut values = vec![7];
                    let mut weights = vec![cfg.pocket_fraction];
                    let rest: Vec<i64> = (8..=DAY_DOMAIN - w).collect();
                    let each = (1.0 - cfg.pocket_fraction) / rest.len() as f64;
                    weights.extend(std::iter::repeat(each).take(rest.len()));
                    values.extend(rest);
                    PredicateTemplate::Range {
                        column: "day".into(),
                        start: ValueDraw::Weighted { values, weights },
                        width: w,
                    }
                }
                Regime::Unstable => PredicateTemplate::Range {
                    column: "day".into(),
                    start: ValueDraw::Uniform { lo: 0, hi: 2 * w - 1 },
                    width: w,
                },
                _ => PredicateTemplate::Sweep {
                    column: "day".into(),
                    lo: (w - 1) / 2,
                    hi: 2 * w + (w - 1) / 2,
                    steps: cfg.sweep_steps,
                    width: w,
                },
            };
            if regime != Regime::Stable {
                catalog.mutate("orders", &day_shift())?;
            }
            workload = qsc_spec(cfg, day);
        }
        Regime::Join => {
            let left_spec = TableSpec {
                name: "orders".into(),
                n_rows: cfg.n_rows,
                seed: cfg.data_seed,
                columns: vec![
                    ColumnSpec::new("status", ColumnDist::Zipf { n_distinct: 8, s: 1.2 }, true),
                    ColumnSpec::new(
                        "cust",
                        ColumnDist::Uniform { lo: 0, hi: cfg.join_right_rows as i64 - 1 },
                        true,
                    ),
                ],
            };
            let right_spec = TableSpec {
                name: "customers".into(),
                n_rows: cfg.join_right_rows,
                seed: cfg.data_seed + 1,
                columns: vec![
                    ColumnSpec::new("id", ColumnDist::Sequence, true),
                    ColumnSpec::new("region", ColumnDist::Uniform { lo: 0, hi: 9 }, false),
                ],
            };
            let left = build_table(&left_spec)?;
            let right = build_table(&right_spec)?;
            let ls = analyze(&left, &["status", "cust"], level, cfg)?;
            let rs = analyze(&right, &["id", "region"], level, cfg)?;
            catalog.insert(left, ls);
            catalog.insert(right, rs);
            // the dominant status is split into values the statistics never saw
            catalog.mutate(
                "orders",
                &[Mutation::Reassign {
                    column: "status".into(),
                    from: 0,
                    fraction: 1.0,
                    to: ValueDraw::Uniform { lo: 8, hi: 11 },
                    seed: 2000,
                }],
            )?;
            workload = WorkloadSpec {
                kind: WorkloadKind::Join,
                table: "orders".into(),
                n_queries: cfg.n_queries,
                seed: cfg.workload_seed,
                predicates: vec![PredicateTemplate::Equality {
                    column: "status".into(),
                    value: ValueDraw::Uniform { lo: 8, hi: 11 },
                }],
                join: Some(JoinTemplate {
                    right_table: "customers".into(),
                    left_key: "cust".into(),
                    right_key: "id".into(),
                    right_predicates: vec![PredicateTemplate::Range {
                        column: "region".into(),
                        start: ValueDraw::Uniform { lo: 0, hi: 7 },
                        width: 3,
                    }],
                }),
            };
        }
    }
    let mut scenario = Scenario {
        regime,
        catalog,
        workload,
        queries: Vec::new(),
    };
    scenario.queries = scenario.queries_for_seed(cfg.workload_seed)?;
    Ok(scenario)
}
