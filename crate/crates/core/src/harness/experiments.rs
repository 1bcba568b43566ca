//! The nine experiments and the per-method stream runner behind most of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{self, estimate_cv, Backend, ProbeRequest, SampleMode};
use crate::error::{Error, Result};
use crate::optimizer::{oracle_plan, Estimator, PlanRecord, Session, SessionConfig};
use crate::probe_cache::CacheStats;
use crate::query::{Predicate, Query};
use crate::risky_gate::GateConfig;
use crate::table::ColumnTable;

use super::config::HarnessConfig;
use super::metrics::{median, median_across, summarize, MethodMetrics};
use super::scenario::{build_scenario, Regime, Scenario, StatsLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentId {
    OverheadA,
    StabilityB,
    SensSweep,
    Baselines,
    JoinUnstable,
    BindFlipC,
    SpeedupD,
    QscImpact,
    RuntimeDist,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::OverheadA,
        ExperimentId::StabilityB,
        ExperimentId::SensSweep,
        ExperimentId::Baselines,
        ExperimentId::JoinUnstable,
        ExperimentId::BindFlipC,
        ExperimentId::SpeedupD,
        ExperimentId::QscImpact,
        ExperimentId::RuntimeDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::OverheadA => "OVERHEAD_A",
            ExperimentId::StabilityB => "STABILITY_B",
            ExperimentId::SensSweep => "SENS_SWEEP",
            ExperimentId::Baselines => "BASELINES",
            ExperimentId::JoinUnstable => "JOIN_UNSTABLE",
            ExperimentId::BindFlipC => "BIND_FLIP_C",
            ExperimentId::SpeedupD => "SPEEDUP_D",
            ExperimentId::QscImpact => "QSC_IMPACT",
            ExperimentId::RuntimeDist => "RUNTIME_DIST",
        }
    }

    /// Methods run when none are requested explicitly.
    pub fn default_methods(self) -> Vec<Method> {
        use Method::*;
        match self {
            ExperimentId::Baselines => vec![Base, BaseHighStats, BaseExtended, CpuGate, GpuGate],
            ExperimentId::SensSweep | ExperimentId::OverheadA => vec![GpuGate],
            ExperimentId::StabilityB | ExperimentId::SpeedupD => vec![CpuGate, GpuGate],
            ExperimentId::RuntimeDist | ExperimentId::BindFlipC => vec![Base, GpuGate],
            ExperimentId::JoinUnstable | ExperimentId::QscImpact => vec![Base, CpuGate, GpuGate],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Base,
    BaseHighStats,
    BaseExtended,
    CpuGate,
    GpuGate,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Base,
        Method::BaseHighStats,
        Method::BaseExtended,
        Method::CpuGate,
        Method::GpuGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "BASE",
            Method::BaseHighStats => "BASE_HIGH_STATS",
            Method::BaseExtended => "BASE_EXTENDED",
            Method::CpuGate => "CPU_GATE",
            Method::GpuGate => "GPU_GATE",
        }
    }

    pub fn backend(self) -> Backend {
        match self {
            Method::GpuGate => Backend::Parallel,
            _ => Backend::Serial,
        }
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Method::CpuGate | Method::GpuGate)
    }

    /// Statistics the method plans with; gated methods use `gate_level`.
    pub fn stats_level(self, gate_level: StatsLevel) -> StatsLevel {
        match self {
            Method::Base => StatsLevel::Default,
            Method::BaseHighStats => StatsLevel::High,
            Method::BaseExtended => StatsLevel::Extended,
            Method::CpuGate | Method::GpuGate => gate_level,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub methods: Vec<Method>,
    pub config: HarnessConfig,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId, config: HarnessConfig) -> Self {
        ExperimentSpec {
            id,
            methods: id.default_methods(),
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        self.config.validate()
    }
}

/// A plain table for figure-ready per-point output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Points {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Points {
    fn new(header: &[&str]) -> Self {
        Points {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// One raw record tagged with its repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    #[serde(flatten)]
    pub record: PlanRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub id: ExperimentId,
    pub methods: Vec<Method>,
    pub config: HarnessConfig,
    /// Medians across repetitions, one per method (or per sweep point).
    pub summary: Vec<MethodMetrics>,
    pub per_rep: Vec<Vec<MethodMetrics>>,
    pub records: Vec<RunRecord>,
    pub points: Points,
    /// Derived quantities specific to the experiment (fits, ratios).
    pub derived: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ExperimentOutput {
    pub fn metrics(&self, method: &str) -> Option<&MethodMetrics> {
        self.summary.iter().find(|m| m.method == method)
    }
}

/// Session configuration for `method` under the harness settings.
pub fn session_config(method: Method, cfg: &HarnessConfig, seed: u64) -> SessionConfig {
    let gate = method.is_gated().then(|| {
        let mut g: GateConfig = cfg.gate.clone();
        if cfg.equal_latency_budget && method == Method::GpuGate {
            g.cost.parallelism = cfg
                .parallel_factor
                .unwrap_or_else(|| rayon::current_num_threads() as f64)
                .max(1.0);
        }
        g
    });
    SessionConfig {
        method: method.name().to_string(),
        gate,
        backend: method.backend(),
        n_sample: cfg.n_sample,
        probe_budget_ms: cfg.equal_latency_budget.then_some(cfg.budget_ms),
        sample_mode: SampleMode::UniformRow,
        estimator: if method == Method::BaseExtended {
            Estimator::Extended
        } else {
            Estimator::Independence
        },
        cache: cfg.cache,
        costs: cfg.costs,
        seed,
        explain: cfg.explain,
        ..SessionConfig::default()
    }
}

/// Runs one query stream through a fresh session.
pub fn run_stream(scenario: &Scenario, queries: &[Query], config: SessionConfig) -> Result<(Vec<PlanRecord>, CacheStats)> {
    let mut session = Session::new(&scenario.catalog, config)?;
    let records = queries.iter().map(|q| session.run(q)).collect::<Result<Vec<_>>>()?;
    Ok((records, session.cache().stats()))
}

/// Scenarios built lazily per statistics level; the data is identical across levels.
struct Scenarios<'a> {
    regime: Regime,
    cfg: &'a HarnessConfig,
    built: BTreeMap<u8, Scenario>,
}

impl<'a> Scenarios<'a> {
    fn new(regime: Regime, cfg: &'a HarnessConfig) -> Self {
        Scenarios {
            regime,
            cfg,
            built: BTreeMap::new(),
        }
    }

    fn get(&mut self, level: StatsLevel) -> Result<&Scenario> {
        let key = level as u8;
        if !self.built.contains_key(&key) {
            let s = build_scenario(self.regime, level, &self.cfg.scenario)?;
            self.built.insert(key, s);
        }
        Ok(&self.built[&key])
    }
}

fn regime_of(id: ExperimentId) -> Regime {
    match id {
        ExperimentId::SensSweep | ExperimentId::Baselines | ExperimentId::OverheadA | ExperimentId::StabilityB | ExperimentId::SpeedupD => {
            Regime::Stable
        }
        ExperimentId::JoinUnstable => Regime::Join,
        ExperimentId::BindFlipC => Regime::BindSweep,
        ExperimentId::QscImpact | ExperimentId::RuntimeDist => Regime::Unstable,
    }
}

/// Gated methods see high-resolution statistics in the stable regime and the
/// same stale default statistics as the baseline elsewhere.
fn gate_level(regime: Regime) -> StatsLevel {
    match regime {
        Regime::Stable => StatsLevel::High,
        _ => StatsLevel::Default,
    }
}

fn first_range_lo(q: &Query) -> String {
    q.predicates
        .iter()
        .find_map(|p| match p.op {
            crate::query::CmpOp::Between(lo, _) => Some(lo.to_string()),
            _ => None,
        })
        .unwrap_or_default()
}

struct StreamRun {
    summary: Vec<MethodMetrics>,
    per_rep: Vec<Vec<MethodMetrics>>,
    records: Vec<RunRecord>,
    points: Points,
}

/// Runs `variants` (label, method, session tweak) over `reps` seeded streams.
fn run_streams(
    regime: Regime,
    cfg: &HarnessConfig,
    variants: &[(String, Method, Option<f64>)],
) -> Result<StreamRun> {
    let mut scenarios = Scenarios::new(regime, cfg);
    let mut per_rep = Vec::with_capacity(cfg.reps);
    let mut records = Vec::new();
    let mut points = Points::new(&[
        "rep", "method", "query_id", "bind", "plan", "gated", "probed", "est_rows", "actual_rows", "gate_ms", "probe_ms",
        "exec_ms", "total_ms",
    ]);
    for rep in 0..cfg.reps {
        let seed = cfg.seed.wrapping_add(rep as u64);
        let workload_seed = cfg.scenario.workload_seed.wrapping_add(rep as u64);
        let queries = scenarios.get(StatsLevel::Default)?.queries_for_seed(workload_seed)?;
        let oracle: Option<Vec<u64>> = if cfg.track_oracle {
            let sc = scenarios.get(StatsLevel::Default)?;
            Some(
                queries
                    .iter()
                    .map(|q| oracle_plan(&sc.catalog, q, &cfg.costs).map(|p| p.hash))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        let mut rep_metrics = Vec::with_capacity(variants.len());
        for (label, method, d_threshold) in variants {
            let sc = scenarios.get(method.stats_level(gate_level(regime)))?;
            let mut sconf = session_config(*method, cfg, seed);
            sconf.method = label.clone();
            if let (Some(d), Some(g)) = (d_threshold, sconf.gate.as_mut()) {
                g.d_threshold = *d;
            }
            let (recs, cache) = run_stream(sc, &queries, sconf)?;
            let mut m = summarize(label, &recs, cfg.warmup_fraction, oracle.as_deref(), cfg.cache.then_some(cache))?;
            m.cache = cfg.cache.then_some(cache);
            for (q, r) in queries.iter().zip(&recs) {
                points.push(vec![
                    rep.to_string(),
                    label.clone(),
                    r.query_id.to_string(),
                    first_range_lo(q),
                    r.plan.clone().unwrap_or_default(),
                    r.gated.to_string(),
                    r.probed.to_string(),
                    format!("{:.1}", r.est_rows),
                    r.actual_rows.map(|a| a.to_string()).unwrap_or_default(),
                    format!("{:.4}", r.gate_ms),
                    format!("{:.4}", r.probe_ms),
                    format!("{:.4}", r.exec_ms),
                    format!("{:.4}", r.total_ms),
                ]);
            }
            records.extend(recs.into_iter().map(|record| RunRecord { rep, record }));
            rep_metrics.push(m);
        }
        per_rep.push(rep_metrics);
    }
    let summary = (0..variants.len())
        .map(|i| median_across(&per_rep.iter().map(|r| r[i].clone()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(StreamRun {
        summary,
        per_rep,
        records,
        points,
    })
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn fit_power_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("power fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).map(|(slope, _)| slope)
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::SingularFit("all x values equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Coefficient of determination of the least-squares line through the points.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (slope, intercept) = linear_fit(xs, ys)?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::SingularFit("all y values equal".into()));
    }
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// The mid-selectivity Q_SC predicate whose estimate stability is measured.
pub fn cv_predicate() -> Predicate {
    Predicate::eq("status", 1)
}

/// Probe request over payload columns for timing grids: `m` sliding windows of
/// `k` predicates drawn from a shared pool, as candidate sets for one query do.
pub fn timing_request(table: &ColumnTable, n_sample: usize, k: usize, m: usize, seed: u64) -> Result<ProbeRequest> {
    let payload: Vec<String> = table.column_names().filter(|c| c.starts_with('p')).map(String::from).collect();
    if payload.is_empty() {
        return Err(Error::UnsupportedQuery("timing grid needs payload columns p0..".into()));
    }
    let pool: Vec<Predicate> = (0..k + m - 1)
        .map(|i| {
            let col = &payload[i % payload.len()];
            // wide ranges keep conjunctions non-empty
            let lo = ((i * 37) % 500) as i64;
            Predicate::between(col.as_str(), lo, lo + 9_000)
        })
        .collect();
    let sets = (0..m).map(|j| pool[j..j + k].to_vec()).collect();
    Ok(ProbeRequest::new(table, n_sample, sets, seed))
}

fn median_timers(table: &ColumnTable, req: &ProbeRequest, backend: Backend, reps: usize) -> Result<engine::StageTimers> {
    let mut runs = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rq = req.clone();
        rq.seed = req.seed.wrapping_add(r as u64);
        runs.push(engine::probe(table, &rq, backend)?.timers);
    }
    let med = |f: fn(&engine::StageTimers) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(engine::StageTimers {
        sample_ms: med(|t| t.sample_ms)?,
        xfer_in_ms: med(|t| t.xfer_in_ms)?,
        eval_ms: med(|t| t.eval_ms)?,
        xfer_out_ms: med(|t| t.xfer_out_ms)?,
        reduce_ms: med(|t| t.reduce_ms)?,
        total_ms: med(|t| t.total_ms)?,
    })
}

fn fmt_timers(t: &engine::StageTimers) -> Vec<String> {
    [t.sample_ms, t.xfer_in_ms, t.eval_ms, t.xfer_out_ms, t.reduce_ms, t.total_ms]
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect()
}

const TIMER_COLUMNS: [&str; 6] = ["sample_ms", "xfer_in_ms", "eval_ms", "xfer_out_ms", "reduce_ms", "total_ms"];

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let cfg = &spec.config;
    let regime = regime_of(spec.id);
    let mut out = ExperimentOutput {
        id: spec.id,
        methods: spec.methods.clone(),
        config: cfg.clone(),
        summary: Vec::new(),
        per_rep: Vec::new(),
        records: Vec::new(),
        points: Points::default(),
        derived: BTreeMap::new(),
        notes: vec!["plan coverage is 1.0: every chosen plan hash is logged".into()],
    };
    let plain: Vec<(String, Method, Option<f64>)> =
        spec.methods.iter().map(|m| (m.name().to_string(), *m, None)).collect();

    match spec.id {
        ExperimentId::Baselines
        | ExperimentId::JoinUnstable
        | ExperimentId::BindFlipC
        | ExperimentId::QscImpact
        | ExperimentId::RuntimeDist => {
            let run = run_streams(regime, cfg, &plain)?;
            out.summary = run.summary;
            out.per_rep = run.per_rep;
            out.records = run.records;
            out.points = run.points;
            if let (Some(b), Some(g)) = (out.metrics("BASE").cloned(), out.metrics("GPU_GATE").cloned()) {
                out.derived.insert("exec_p99_reduction".into(), 1.0 - g.exec.p99 / b.exec.p99);
                out.derived.insert("total_p99_ratio".into(), g.total.p99 / b.total.p99);
                if b.plan_flip > 0.0 {
                    out.derived.insert("flip_reduction".into(), 1.0 - g.plan_flip / b.plan_flip);
                }
            }
        }
        ExperimentId::SensSweep => {
            let mut variants = Vec::new();
            for m in &spec.methods {
                if !m.is_gated() {
                    continue;
                }
                for d in &cfg.sweep_d {
                    variants.push((format!("{}@D={d:.2}", m.name()), *m, Some(*d)));
                }
            }
            if variants.is_empty() {
                return Err(Error::Config("SENS_SWEEP needs a gated method".into()));
            }
            let run = run_streams(regime, cfg, &variants)?;
            let rates: Vec<f64> = run.summary.iter().map(|m| m.gated_rate).collect();
            let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
            out.derived.insert("gated_rate_spread".into(), spread);
            out.derived.insert(
                "max_plan_flip".into(),
                run.summary.iter().map(|m| m.plan_flip).fold(0.0, f64::max),
            );
            let mut pts = Points::new(&["variant", "d_threshold", "gated_rate", "plan_flip"]);
            for ((label, _, d), m) in variants.iter().zip(&run.summary) {
                pts.push(vec![
                    label.clone(),
                    format!("{:.2}", d.unwrap_or(cfg.gate.d_threshold)),
                    format!("{:.4}", m.gated_rate),
                    format!("{:.4}", m.plan_flip),
                ]);
            }
            out.summary = run.summary;
            out.per_rep = run.per_rep;
            out.records = run.records;
            out.points = pts;
        }
        ExperimentId::StabilityB => {
            let sc = build_scenario(regime, StatsLevel::Default, &cfg.scenario)?;
            let table = sc.catalog.table("orders")?;
            let mut pts = Points::new(&["backend", "n_sample", "mean_sel", "est_cv"]);
            for m in &spec.methods {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for &n in &cfg.cv_budgets {
                    let req = ProbeRequest::new(table, n, vec![vec![cv_predicate()]], cfg.seed);
                    let rep = estimate_cv(table, &req, cfg.cv_reps, m.backend())?;
                    let cv = rep.set_cv[0].ok_or_else(|| Error::EmptyInput("zero-mean estimate".into()))?;
                    pts.push(vec![
                        format!("{:?}", m.backend()),
                        n.to_string(),
                        format!("{:.6}", rep.set_mean[0]),
                        format!("{cv:.6}"),
                    ]);
                    xs.push(n as f64);
                    ys.push(cv);
                }
                out.derived
                    .insert(format!("cv_exponent_{}", m.name()), fit_power_exponent(&xs, &ys)?);
            }
            out.points = pts;
        }
        ExperimentId::OverheadA => {
            let sc = build_scenario(regime, StatsLevel::High, &cfg.scenario)?;
            let table = sc.catalog.table("orders")?;
            let q = &sc.queries[0];
            let sets: Vec<Vec<Predicate>> = q.predicates.iter().map(|p| vec![p.clone()]).chain([q.predicates.clone()]).collect();
            let mut header = vec!["backend", "key_only", "n_sample", "est_probe_ms"];
            header.extend(TIMER_COLUMNS);
            let mut pts = Points::new(&header);
            for backend in [Backend::Serial, Backend::Parallel] {
                for key_only in [true, false] {
                    for &n in &cfg.overhead_samples {
                        let mut req = ProbeRequest::new(table, n.min(table.n_rows()), sets.clone(), cfg.seed);
                        req.key_only = key_only;
                        let t = median_timers(table, &req, backend, cfg.timing_reps)?;
                        let mut row = vec![
                            format!("{backend:?}"),
                            key_only.to_string(),
                            req.n_sample.to_string(),
                            format!("{:.4}", cfg.gate.cost.estimate_ms(req.n_sample, req.k(), req.m())),
                        ];
                        row.extend(fmt_timers(&t));
                        pts.push(row);
                    }
                }
            }
            out.points = pts;
            // break-even accounting on the unstable stream
            let run = run_streams(Regime::Unstable, cfg, &plain)?;
            let declined = run
                .records
                .iter()
                .filter_map(|r| r.record.decision.as_ref())
                .filter(|d| d.reason == crate::risky_gate::GateReason::RiskButNotWorth)
                .count();
            out.derived.insert("declined_not_worth".into(), declined as f64);
            out.summary = run.summary;
            out.per_rep = run.per_rep;
            out.records = run.records;
        }
        ExperimentId::SpeedupD => {
            let mut tcfg = cfg.scenario.clone();
            tcfg.n_rows = cfg.speedup_n.iter().copied().max().unwrap_or(tcfg.n_rows).max(1024);
            let sc = build_scenario(Regime::Stable, StatsLevel::Default, &tcfg)?;
            let table = sc.catalog.table("orders")?;
            let mut header = vec!["backend", "n_sample", "k", "m"];
            header.extend(TIMER_COLUMNS);
            let mut pts = Points::new(&header);
            let mut timers: BTreeMap<(Backend, usize, usize, usize), engine::StageTimers> = BTreeMap::new();
            for &n in &cfg.speedup_n {
                for &k in &cfg.speedup_k {
                    for &m in &cfg.speedup_m {
                        let req = timing_request(table, n.min(table.n_rows()), k, m, cfg.seed)?;
                        for backend in [Backend::Serial, Backend::Parallel] {
                            let t = median_timers(table, &req, backend, cfg.timing_reps)?;
                            timers.insert((backend, n, k, m), t);
                            let mut row = vec![format!("{backend:?}"), req.n_sample.to_string(), k.to_string(), m.to_string()];
                            row.extend(fmt_timers(&t));
                            pts.push(row);
                        }
                    }
                }
            }
            let (n, k, m) = (
                *cfg.speedup_n.iter().max().unwrap_or(&0),
                *cfg.speedup_k.iter().max().unwrap_or(&0),
                *cfg.speedup_m.iter().max().unwrap_or(&0),
            );
            if let (Some(s), Some(p)) = (timers.get(&(Backend::Serial, n, k, m)), timers.get(&(Backend::Parallel, n, k, m))) {
                out.derived.insert("parallel_over_serial".into(), p.total_ms / s.total_ms);
            }
            // marginal time per predicate-set evaluation (K·M) at the largest N
            let mut slopes = BTreeMap::new();
            for backend in [Backend::Serial, Backend::Parallel] {
                let at_n = |f: fn(&engine::StageTimers) -> f64| -> (Vec<f64>, Vec<f64>) {
                    timers
                        .iter()
                        .filter(|((b, nn, _, _), _)| *b == backend && *nn == n)
                        .map(|((_, _, k, m), t)| ((k * m) as f64, f(t)))
                        .unzip()
                };
                let (xs, ys) = at_n(|t| t.total_ms);
                if let Ok((slope, _)) = linear_fit(&xs, &ys) {
                    slopes.insert(backend, slope);
                }
                if backend == Backend::Serial {
                    if let Ok(r2) = r_squared(&xs, &ys) {
                        out.derived.insert("serial_km_r2".into(), r2);
                    }
                    let (xs, ys) = at_n(|t| t.eval_ms);
                    if let Ok(r2) = r_squared(&xs, &ys) {
                        out.derived.insert("serial_eval_km_r2".into(), r2);
                    }
                }
            }
            if let (Some(s), Some(p)) = (slopes.get(&Backend::Serial), slopes.get(&Backend::Parallel)) {
                out.derived.insert("serial_ms_per_set".into(), *s);
                out.derived.insert("parallel_ms_per_set".into(), *p);
                out.derived.insert("marginal_parallel_over_serial".into(), p / s);
            }
            out.derived.insert("worker_threads".into(), rayon::current_num_threads() as f64);
            out.points = pts;
        }
    }
    Ok(out)
}
