//! One sequential query session: estimate, gate, probe, re-cost, execute.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{self, sample::sample_uniform, Backend, ProbeRequest, SampleMode};
use crate::error::{Error, Result};
use crate::optimizer::exec::{execute, exact_selectivities};
use crate::optimizer::plan::{
    argmin, cost_all, enumerate_plans, explain, CandidatePlan, CardInputs, CostConstants, FilterCard, JoinCard,
};
use crate::probe_cache::{BindQuantizer, CacheEntry, ProbeCache, DEFAULT_CAPACITY, DEFAULT_RANGE_BUCKETS};
use crate::query::{Predicate, Query};
use crate::risky_gate::{evaluate_gate, GateConfig, GateDecision, GateInputs, PcsInputs, PlanContext};
use crate::stats::{estimate_ndv_current, estimate_selectivity_extended, inject_staleness, Mutation, StatsSnapshot};
use crate::table::ColumnTable;

/// Tables and the (possibly stale) statistics the optimizer believes.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, ColumnTable>,
    stats: BTreeMap<String, StatsSnapshot>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: ColumnTable, stats: StatsSnapshot) {
        self.stats.insert(table.name().to_string(), stats);
        self.tables.insert(table.name().to_string(), table);
    }

    pub fn table(&self, name: &str) -> Result<&ColumnTable> {
        self.tables.get(name).ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn stats(&self, name: &str) -> Result<&StatsSnapshot> {
        self.stats
            .get(name)
            .ok_or_else(|| Error::MissingStatistics(name.to_string()))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn set_stats(&mut self, stats: StatsSnapshot) {
        self.stats.insert(stats.table.clone(), stats);
    }

    /// Changes table data without touching its statistics.
    pub fn mutate(&mut self, table: &str, mutations: &[Mutation]) -> Result<()> {
        let t = self
            .tables
            .get_mut(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        inject_staleness(t, mutations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Independence,
    /// Pair frequency lists where available.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub method: String,
    /// `None` disables gating: plain cost-based optimization.
    pub gate: Option<GateConfig>,
    pub backend: Backend,
    pub n_sample: usize,
    /// When set, each probe takes the largest sample the gate's cost model
    /// affords within this many milliseconds instead of `n_sample`.
    pub probe_budget_ms: Option<f64>,
    pub sample_mode: SampleMode,
    pub estimator: Estimator,
    pub cache: bool,
    pub cache_capacity: usize,
    pub range_buckets: u32,
    pub costs: CostConstants,
    /// Fraction of rows read when refreshing current NDV estimates.
    pub ndv_sample_fraction: f64,
    pub seed: u64,
    pub explain: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            method: "BASE".into(),
            gate: None,
            backend: Backend::Parallel,
            n_sample: 8192,
            probe_budget_ms: None,
            sample_mode: SampleMode::UniformRow,
            estimator: Estimator::Independence,
            cache: false,
            cache_capacity: DEFAULT_CAPACITY,
            range_buckets: DEFAULT_RANGE_BUCKETS,
            costs: CostConstants::default(),
            ndv_sample_fraction: 1.0,
            seed: 0,
            explain: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.gate {
            g.validate()?;
        }
        if self.n_sample == 0 {
            return Err(Error::InvalidParameter("n_sample must be >= 1".into()));
        }
        if let Some(b) = self.probe_budget_ms {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter("probe budget must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of one query. Millisecond fields are wall-clock; everything else is
/// deterministic for a fixed configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub query_id: u64,
    pub method: String,
    pub plan_hash: Option<u64>,
    pub plan: Option<String>,
    pub gated: bool,
    pub probed: bool,
    pub cache_hit: bool,
    pub est_rows: f64,
    /// Estimate the chosen plan was costed with (after probing, if any).
    pub final_est_rows: f64,
    pub actual_rows: Option<u64>,
    pub est_cost: f64,
    pub n_sample: usize,
    pub gate_ms: f64,
    pub probe_ms: f64,
    pub exec_ms: f64,
    pub total_ms: f64,
    pub decision: Option<GateDecision>,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<String>,
}

impl PlanRecord {
    /// The record with every wall-clock field zeroed.
    pub fn without_timings(&self) -> PlanRecord {
        PlanRecord {
            gate_ms: 0.0,
            probe_ms: 0.0,
            exec_ms: 0.0,
            total_ms: 0.0,
            explain: None,
            ..self.clone()
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Per-side view of a query: one table and its conjuncts.
struct Side<'a> {
    table: &'a ColumnTable,
    stats: &'a StatsSnapshot,
    preds: &'a [Predicate],
}

/// Selectivities for one side: per conjunct in query order, and the conjunction.
#[derive(Debug, Clone)]
struct Sels {
    marginals: Vec<f64>,
    joint: f64,
}

fn estimate_side(side: &Side, estimator: Estimator) -> Result<Sels> {
    let mut marginals = Vec::with_capacity(side.preds.len());
    for p in side.preds {
        marginals.push(side.stats.get(&p.column)?.selectivity(&p.op));
    }
    let joint = match estimator {
        Estimator::Independence => marginals.iter().product::<f64>().clamp(0.0, 1.0),
        Estimator::Extended => estimate_selectivity_extended(side.stats, side.preds)?,
    };
    Ok(Sels { marginals, joint })
}

/// Candidate sets sent to the measurement engine: every conjunct alone, then
/// the full conjunction when there is more than one.
fn probe_sets(preds: &[Predicate]) -> Vec<Vec<Predicate>> {
    let mut sets: Vec<Vec<Predicate>> = preds.iter().map(|p| vec![p.clone()]).collect();
    if preds.len() > 1 {
        sets.push(preds.to_vec());
    }
    sets
}

fn seed_for(base: u64, query_id: u64, salt: u64) -> u64 {
    base ^ query_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Cheap correlation check over a small pre-sample. With an indexed conjunct B,
/// P(B) is exact from the index and P(rest | B) comes from a systematic sample
/// of B's rows; otherwise every term comes from a uniform row sample.
fn pcs_presample(side: &Side, est: &Sels, rows: usize, seed: u64) -> Result<Option<PcsInputs>> {
    let preds = side.preds;
    if preds.len() < 2 || rows == 0 {
        return Ok(None);
    }
    let table = side.table;
    let n = table.n_rows().max(1) as f64;
    let cols: Vec<&[i64]> = preds.iter().map(|p| table.column(&p.column)).collect::<Result<_>>()?;
    let hit = |i: usize, r: usize| preds[i].op.matches(cols[i][r]);

    let anchor = (0..preds.len())
        .filter(|&i| table.is_indexed(&preds[i].column))
        .min_by(|&a, &b| est.marginals[a].total_cmp(&est.marginals[b]).then(a.cmp(&b)));
    match anchor {
        Some(b) => {
            let index = table.index(&preds[b].column).expect("indexed column");
            let b_rows = index.lookup(&preds[b].op);
            if b_rows.is_empty() {
                return Ok(None);
            }
            let take = rows.min(b_rows.len());
            let mut both = 0usize;
            for s in 0..take {
                let r = b_rows[s * b_rows.len() / take] as usize;
                if (0..preds.len()).all(|i| i == b || hit(i, r)) {
                    both += 1;
                }
            }
            let p_b = b_rows.len() as f64 / n;
            let mut p_rest = 1.0;
            for (i, p) in preds.iter().enumerate() {
                if i == b {
                    continue;
                }
                p_rest *= match table.index(&p.column) {
                    Some(ix) => ix.count(&p.op) as f64 / n,
                    None => est.marginals[i],
                };
            }
            Ok(Some(PcsInputs {
                joint: p_b * both as f64 / take as f64,
                marginal_a: p_rest,
                marginal_b: p_b,
            }))
        }
        None => {
            let take = rows.min(table.n_rows());
            let sample = sample_uniform(table.n_rows(), take, seed)?;
            let mut each = vec![0usize; preds.len()];
            let mut all = 0usize;
            for &r in &sample {
                let r = r as usize;
                let mut every = true;
                for (i, c) in each.iter_mut().enumerate() {
                    if hit(i, r) {
                        *c += 1;
                    } else {
                        every = false;
                    }
                }
                all += every as usize;
            }
            let m = take as f64;
            Ok(Some(PcsInputs {
                joint: all as f64 / m,
                marginal_a: each[1..].iter().map(|&c| c as f64 / m).product(),
                marginal_b: each[0] as f64 / m,
            }))
        }
    }
}

/// Stable ordering of conjuncts matching the cache key's normalization.
fn normalized_order(quantizer: &BindQuantizer, preds: &[Predicate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by_key(|&i| (preds[i].column.clone(), preds[i].op.symbol(), quantizer.bucket(&preds[i])));
    idx
}

pub struct Session<'a> {
    catalog: &'a Catalog,
    config: SessionConfig,
    cache: ProbeCache,
    quantizer: BindQuantizer,
    ndv: HashMap<(String, String), (u64, u64)>,
    generations: HashMap<String, u64>,
}

impl<'a> Session<'a> {
    pub fn new(catalog: &'a Catalog, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let mut quantizer = BindQuantizer::new(config.range_buckets);
        for snap in catalog.stats.values() {
            for (col, st) in &snap.columns {
                quantizer.set_domain(col, st.histogram.min(), st.histogram.max());
            }
        }
        Ok(Session {
            catalog,
            cache: ProbeCache::new(config.cache_capacity),
            config,
            quantizer,
            ndv: HashMap::new(),
            generations: HashMap::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn cache(&self) -> &ProbeCache {
        &self.cache
    }

    /// Drops cached probes and NDV estimates for tables whose data changed.
    fn sync_generation(&mut self, table: &ColumnTable) {
        let g = table.generation();
        let name = table.name().to_string();
        if let Some(old) = self.generations.insert(name.clone(), g) {
            if old != g {
                self.cache.invalidate_on_mutation(&name);
                self.ndv.retain(|(t, _), _| *t != name);
            }
        }
    }

    /// Current NDV estimate, refreshed once per table generation. Maintaining
    /// it is background work and is not charged to the query.
    fn ndv_pair(&mut self, side_table: &ColumnTable, stats: &StatsSnapshot, column: &str) -> Result<(u64, u64)> {
        let key = (side_table.name().to_string(), column.to_string());
        if let Some(v) = self.ndv.get(&key) {
            return Ok(*v);
        }
        let hist = stats.get(column)?.ndv_hist;
        let est = estimate_ndv_current(side_table, column, self.config.ndv_sample_fraction, self.config.seed)?;
        self.ndv.insert(key, (hist, est.ndv_est));
        Ok((hist, est.ndv_est))
    }

    fn sample_size(&self, gate: &GateConfig, table: &ColumnTable, k: usize, m: usize) -> usize {
        let n = match self.config.probe_budget_ms {
            Some(b) => gate.cost.affordable_sample(b, k, m),
            None => self.config.n_sample,
        };
        n.clamp(1, table.n_rows().max(1))
    }

    fn probe_side(&self, side: &Side, n_sample: usize, seed: u64) -> Result<(Sels, Option<f64>)> {
        let sets = probe_sets(side.preds);
        let mut req = ProbeRequest::new(side.table, n_sample, sets.clone(), seed);
        req.mode = self.config.sample_mode;
        let res = engine::probe(side.table, &req, self.config.backend)?;
        let marginals = side
            .preds
            .iter()
            .map(|p| res.predicate_selectivity(p).unwrap_or(0.0))
            .collect();
        let joint = res.sets.last().map(|s| s.s_probe).unwrap_or(1.0);
        let pcs = res.pcs(sets.len() - 1, sets.last().unwrap());
        Ok((Sels { marginals, joint }, pcs))
    }

    fn cached(&mut self, side: &Side) -> Option<(Sels, CacheEntry)> {
        if !self.config.cache || side.preds.is_empty() {
            return None;
        }
        let key = self.quantizer.key(side.table.name(), side.preds);
        let entry = self.cache.lookup(&key)?;
        let order = normalized_order(&self.quantizer, side.preds);
        let mut marginals = vec![0.0; side.preds.len()];
        for (slot, &i) in order.iter().enumerate() {
            marginals[i] = *entry.marginal_sel.get(slot)?;
        }
        Some((Sels { marginals, joint: entry.joint() }, entry))
    }

    fn remember(&mut self, side: &Side, sels: &Sels, pcs: Option<f64>, n_sample: usize) {
        if !self.config.cache || side.preds.is_empty() {
            return;
        }
        let key = self.quantizer.key(side.table.name(), side.preds);
        let order = normalized_order(&self.quantizer, side.preds);
        let marginal_sel = order.iter().map(|&i| sels.marginals[i]).collect();
        let mut set_sel = sels.marginals.clone();
        if side.preds.len() > 1 {
            set_sel.push(sels.joint);
        }
        self.cache.put(key, CacheEntry::new(set_sel, marginal_sel, pcs, n_sample));
    }

    /// Runs one query end to end. Errors past validation are recorded rather
    /// than returned.
    pub fn run(&mut self, query: &Query) -> Result<PlanRecord> {
        let catalog = self.catalog;
        let left = catalog.table(&query.table)?;
        let right = match &query.join {
            Some(j) => Some(catalog.table(&j.right_table)?),
            None => None,
        };
        query.validate(left, right)?;
        self.sync_generation(left);
        if let Some(r) = right {
            self.sync_generation(r);
        }
        let mut sides = vec![Side {
            table: left,
            stats: catalog.stats(&query.table)?,
            preds: &query.predicates,
        }];
        if let (Some(j), Some(r)) = (&query.join, right) {
            sides.push(Side {
                table: r,
                stats: catalog.stats(&j.right_table)?,
                preds: &j.right_predicates,
            });
        }

        let mut record = PlanRecord {
            query_id: query.id,
            method: self.config.method.clone(),
            plan_hash: None,
            plan: None,
            gated: false,
            probed: false,
            cache_hit: false,
            est_rows: 0.0,
            final_est_rows: 0.0,
            actual_rows: None,
            est_cost: 0.0,
            n_sample: 0,
            gate_ms: 0.0,
            probe_ms: 0.0,
            exec_ms: 0.0,
            total_ms: 0.0,
            decision: None,
            error: None,
            explain: None,
        };

        let estimator = self.config.estimator;
        let est: Vec<Sels> = sides.iter().map(|s| estimate_side(s, estimator)).collect::<Result<_>>()?;
        let plans = enumerate_plans(query, left, right)?;
        let card = self.card_inputs(query, &sides, &est)?;
        let mut candidates = cost_all(&plans, &card, &self.config.costs)?;
        record.est_rows = candidates[0].est_rows;

        if let Some(gate) = self.config.gate.clone() {
            let k = sides.iter().map(|s| s.preds.len()).max().unwrap_or(0);
            let m: usize = sides.iter().map(|s| probe_sets(s.preds).len()).sum();
            let probe_rows = sides
                .iter()
                .filter(|s| !s.preds.is_empty())
                .map(|s| self.sample_size(&gate, s.table, k.max(1), m.max(1)))
                .min()
                .unwrap_or(1);

            let mut ndv = Vec::new();
            for s in &sides {
                for p in s.preds {
                    ndv.push(self.ndv_pair(s.table, s.stats, &p.column)?);
                }
            }
            if let Some(j) = &query.join {
                ndv.push(self.ndv_pair(sides[0].table, sides[0].stats, &j.left_key)?);
                ndv.push(self.ndv_pair(sides[1].table, sides[1].stats, &j.right_key)?);
            }

            let gate_start = Instant::now();
            let cached: Vec<Option<(Sels, CacheEntry)>> = sides.iter().map(|s| self.cached(s)).collect();
            let s_probe = cached[0].as_ref().map(|(c, _)| c.joint);
            let pcs = match cached[0].as_ref().and_then(|(_, e)| e.pcs) {
                // a cached ratio stands in for the pre-sample
                Some(v) => Some(PcsInputs { joint: v, marginal_a: 1.0, marginal_b: 1.0 }),
                None => pcs_presample(&sides[0], &est[0], gate.pre_sample_rows, seed_for(self.config.seed, query.id, 1))?,
            };
            let max = candidates.iter().map(|c| c.est_cost).fold(f64::MIN, f64::max);
            let min = candidates.iter().map(|c| c.est_cost).fold(f64::MAX, f64::min);
            let inputs = GateInputs {
                ndv,
                s_est: est[0].joint,
                s_probe,
                pcs,
                plan: PlanContext {
                    max_plan_cost_ms: max * self.config.costs.ms_per_unit,
                    min_plan_cost_ms: min * self.config.costs.ms_per_unit,
                    k: k.max(1),
                    m: m.max(1),
                    n_sample: probe_rows,
                },
            };
            let decision = evaluate_gate(&gate, &inputs)?;
            record.gate_ms = ms_since(gate_start);

            if decision.probe {
                record.gated = true;
                let mut measured = Vec::with_capacity(sides.len());
                let probe_start = Instant::now();
                let mut all_cached = true;
                for (i, s) in sides.iter().enumerate() {
                    if s.preds.is_empty() {
                        measured.push(Sels { marginals: vec![], joint: 1.0 });
                        continue;
                    }
                    match &cached[i] {
                        Some((c, _)) => measured.push(c.clone()),
                        None => {
                            all_cached = false;
                            let seed = seed_for(self.config.seed, query.id, 2 + i as u64);
                            let (sels, pcs) = self.probe_side(s, probe_rows, seed)?;
                            self.remember(s, &sels, pcs, probe_rows);
                            measured.push(sels);
                        }
                    }
                }
                record.probe_ms = if all_cached { 0.0 } else { ms_since(probe_start) };
                record.probed = !all_cached;
                record.cache_hit = all_cached;
                record.n_sample = if all_cached { 0 } else { probe_rows };
                let card = self.card_inputs(query, &sides, &measured)?;
                candidates = cost_all(&plans, &card, &self.config.costs)?;
            }
            record.decision = Some(decision);
        }

        let chosen: CandidatePlan = argmin(&candidates).expect("at least one plan").clone();
        record.plan_hash = Some(chosen.hash);
        record.plan = Some(chosen.kind.label());
        record.est_cost = chosen.est_cost;
        record.final_est_rows = chosen.est_rows;

        let exec_start = Instant::now();
        match execute(&chosen.kind, query, left, right) {
            Ok(n) => record.actual_rows = Some(n),
            Err(e) => record.error = Some(e.to_string()),
        }
        record.exec_ms = ms_since(exec_start);
        record.total_ms = record.gate_ms + record.probe_ms + record.exec_ms;
        if self.config.explain {
            record.explain = Some(explain(query, &chosen, &candidates, record.actual_rows));
        }
        Ok(record)
    }

    fn card_inputs(&mut self, query: &Query, sides: &[Side], sels: &[Sels]) -> Result<CardInputs> {
        match &query.join {
            None => Ok(CardInputs::Filter(FilterCard {
                rows: sides[0].table.n_rows() as f64,
                conjunct_sel: sels[0].marginals.clone(),
                joint_sel: sels[0].joint,
            })),
            Some(j) => {
                let (l, r) = (&sides[0], &sides[1]);
                Ok(CardInputs::Join(JoinCard {
                    left_rows: l.table.n_rows() as f64,
                    right_rows: r.table.n_rows() as f64,
                    left_sel: sels[0].joint,
                    right_sel: sels[1].joint,
                    left_key_ndv: l.stats.get(&j.left_key)?.ndv_hist as f64,
                    right_key_ndv: r.stats.get(&j.right_key)?.ndv_hist as f64,
                    left_key_indexed: l.table.is_indexed(&j.left_key),
                    right_key_indexed: r.table.is_indexed(&j.right_key),
                    left_index_sel: first_indexed(l.table, l.preds).map(|i| sels[0].marginals[i]),
                    right_index_sel: first_indexed(r.table, r.preds).map(|i| sels[1].marginals[i]),
                }))
            }
        }
    }
}

fn first_indexed(table: &ColumnTable, preds: &[Predicate]) -> Option<usize> {
    preds.iter().position(|p| table.is_indexed(&p.column))
}

/// The plan chosen when every cardinality input is exact.
pub fn oracle_plan(catalog: &Catalog, query: &Query, costs: &CostConstants) -> Result<CandidatePlan> {
    let candidates = exact_candidates(catalog, query, costs)?;
    Ok(argmin(&candidates).expect("at least one plan").clone())
}

/// Every candidate costed with exact cardinalities.
pub fn exact_candidates(catalog: &Catalog, query: &Query, costs: &CostConstants) -> Result<Vec<CandidatePlan>> {
    let left = catalog.table(&query.table)?;
    let right = match &query.join {
        Some(j) => Some(catalog.table(&j.right_table)?),
        None => None,
    };
    let plans = enumerate_plans(query, left, right)?;
    let (marginals, joint) = exact_selectivities(left, &query.predicates)?;
    let card = match (&query.join, right) {
        (Some(j), Some(r)) => {
            let (right_marginals, right_sel) = exact_selectivities(r, &j.right_predicates)?;
            let distinct = |t: &ColumnTable, c: &str| -> Result<f64> {
                Ok(estimate_ndv_current(t, c, 1.0, 0)?.ndv_est as f64)
            };
            CardInputs::Join(JoinCard {
                left_rows: left.n_rows() as f64,
                right_rows: r.n_rows() as f64,
                left_sel: if query.predicates.is_empty() { 1.0 } else { joint },
                right_sel: if j.right_predicates.is_empty() { 1.0 } else { right_sel },
                left_key_ndv: distinct(left, &j.left_key)?,
                right_key_ndv: distinct(r, &j.right_key)?,
                left_key_indexed: left.is_indexed(&j.left_key),
                right_key_indexed: r.is_indexed(&j.right_key),
                left_index_sel: first_indexed(left, &query.predicates).map(|i| marginals[i]),
                right_index_sel: first_indexed(r, &j.right_predicates).map(|i| right_marginals[i]),
            })
        }
        _ => CardInputs::Filter(FilterCard {
            rows: left.n_rows() as f64,
            conjunct_sel: marginals,
            joint_sel: joint,
        }),
    };
    cost_all(&plans, &card, costs)
}
