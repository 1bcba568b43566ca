//! Trust metrics, thresholds and break-even accounting for probe decisions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of one probe: `c0 + c_t·N + c_e·K·M·N / p` milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeCostModel {
    pub c0_ms: f64,
    pub transfer_ms_per_row: f64,
    pub eval_ms_per_row_pred: f64,
    pub parallelism: f64,
}

impl Default for ProbeCostModel {
    /// Lands at ~0.86 ms for the default probe (N = 8192, K = 2, M = 3).
    fn default() -> Self {
        ProbeCostModel {
            c0_ms: 0.05,
            transfer_ms_per_row: 7.5e-5,
            eval_ms_per_row_pred: 4.0e-6,
            parallelism: 1.0,
        }
    }
}

impl ProbeCostModel {
    pub fn estimate_ms(&self, n_sample: usize, k: usize, m: usize) -> f64 {
        let n = n_sample as f64;
        self.c0_ms
            + self.transfer_ms_per_row * n
            + self.eval_ms_per_row_pred * (k * m) as f64 * n / self.parallelism
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = [self.c0_ms, self.transfer_ms_per_row, self.eval_ms_per_row_pred];
        if coeffs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter("cost coefficients must be >= 0".into()));
        }
        if !(self.parallelism >= 1.0) {
            return Err(Error::InvalidParameter("parallelism factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest sample that fits in `budget_ms` for the given shape.
    pub fn affordable_sample(&self, budget_ms: f64, k: usize, m: usize) -> usize {
        let per_row = self.transfer_ms_per_row + self.eval_ms_per_row_pred * (k * m) as f64 / self.parallelism;
        if per_row <= 0.0 {
            return usize::MAX;
        }
        ((budget_ms - self.c0_ms) / per_row).max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub d_threshold: f64,
    pub sel_error_threshold: f64,
    pub pcs_high: f64,
    pub pcs_low: f64,
    pub cost: ProbeCostModel,
    pub benefit_weight: f64,
    /// Rows in the correlation pre-sample, charged to the gate.
    pub pre_sample_rows: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            d_threshold: 0.25,
            sel_error_threshold: 0.01,
            pcs_high: 1.6,
            pcs_low: 0.7,
            cost: ProbeCostModel::default(),
            benefit_weight: 0.5,
            pre_sample_rows: 1024,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_threshold > 0.0 && self.d_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "d_threshold must be in (0,1), got {}",
                self.d_threshold
            )));
        }
        if !(self.sel_error_threshold >= 0.0) {
            return Err(Error::InvalidParameter("sel_error_threshold must be >= 0".into()));
        }
        if !(self.pcs_low < 1.0 && 1.0 < self.pcs_high) {
            return Err(Error::InvalidParameter("need pcs_low < 1 < pcs_high".into()));
        }
        if !(self.benefit_weight >= 0.0) {
            return Err(Error::InvalidParameter("benefit_weight must be >= 0".into()));
        }
        self.cost.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Signal {
    Drift,
    SelError,
    Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSignals {
    pub drift: f64,
    pub sel_error: Option<f64>,
    pub pcs: Option<f64>,
    pub fired: BTreeSet<Signal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateReason {
    NoRisk,
    RiskButNotWorth,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub signals: GateSignals,
    pub est_probe_cost_ms: f64,
    pub est_benefit_ms: f64,
    pub probe: bool,
    pub reason: GateReason,
}

/// Optimizer-side context for the break-even check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    /// Estimated cost of the most and least expensive candidates, in ms.
    pub max_plan_cost_ms: f64,
    pub min_plan_cost_ms: f64,
    pub k: usize,
    pub m: usize,
    pub n_sample: usize,
}

impl PlanContext {
    pub fn spread_ms(&self) -> f64 {
        (self.max_plan_cost_ms - self.min_plan_cost_ms).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcsInputs {
    pub joint: f64,
    pub marginal_a: f64,
    pub marginal_b: f64,
}

/// Everything [`evaluate_gate`] looks at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateInputs {
    /// `(ndv_hist, ndv_est)` per predicate column; drift is the maximum.
    pub ndv: Vec<(u64, u64)>,
    pub s_est: f64,
    pub s_probe: Option<f64>,
    pub pcs: Option<PcsInputs>,
    pub plan: PlanContext,
}

/// `|ndv_hist − ndv_est| / ndv_hist`.
pub fn compute_drift(ndv_hist: u64, ndv_est: u64) -> Result<f64> {
    if ndv_hist == 0 {
        return Err(Error::InvalidParameter("ndv_hist must be >= 1".into()));
    }
    Ok(ndv_hist.abs_diff(ndv_est) as f64 / ndv_hist as f64)
}

/// `joint / (marginal_a · marginal_b)`; 1 under independence.
pub fn compute_pcs(joint_sel: f64, marginal_a: f64, marginal_b: f64) -> Result<f64> {
    if !(marginal_a > 0.0) || !(marginal_b > 0.0) {
        return Err(Error::InvalidParameter(
            "PCS needs non-zero marginals (degenerate predicate)".into(),
        ));
    }
    Ok(joint_sel / (marginal_a * marginal_b))
}

pub fn sel_error_fires(s_est: f64, s_probe: f64, threshold: f64) -> bool {
    (s_est - s_probe).abs() > threshold
}

pub fn pcs_fires(pcs: f64, config: &GateConfig) -> bool {
    pcs > config.pcs_high || pcs < config.pcs_low
}

pub fn evaluate_gate(config: &GateConfig, inputs: &GateInputs) -> Result<GateDecision> {
    let mut drift: f64 = 0.0;
    for &(hist, est) in &inputs.ndv {
        drift = drift.max(compute_drift(hist, est)?);
    }
    let mut fired = BTreeSet::new();
    if drift >= config.d_threshold {
        fired.insert(Signal::Drift);
    }
    let sel_error = inputs.s_probe.map(|p| (inputs.s_est - p).abs());
    if let Some(e) = sel_error {
        if e > config.sel_error_threshold {
            fired.insert(Signal::SelError);
        }
    }
    // a zero marginal means the signal is unavailable, not a breach
    let pcs = inputs
        .pcs
        .and_then(|p| compute_pcs(p.joint, p.marginal_a, p.marginal_b).ok());
    if let Some(v) = pcs {
        if pcs_fires(v, config) {
            fired.insert(Signal::Correlation);
        }
    }

    let plan = &inputs.plan;
    let est_probe_cost_ms = config.cost.estimate_ms(plan.n_sample, plan.k, plan.m);
    let est_benefit_ms = config.benefit_weight * plan.spread_ms();
    let (probe, reason) = if fired.is_empty() {
        (false, GateReason::NoRisk)
    } else if est_benefit_ms > est_probe_cost_ms {
        (true, GateReason::Probe)
    } else {
        (false, GateReason::RiskButNotWorth)
    };
    Ok(GateDecision {
        signals: GateSignals {
            drift,
            sel_error,
            pcs,
            fired,
        },
        est_probe_cost_ms,
        est_benefit_ms,
        probe,
        reason,
    })
}

/// One calibration grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_sample: usize,
    pub k: usize,
    pub m: usize,
}

/// Anything that can time a probe of a given shape.
pub trait ProbeTimer {
    fn time_ms(&mut self, point: GridPoint) -> Result<f64>;
}

impl<F: FnMut(GridPoint) -> Result<f64>> ProbeTimer for F {
    fn time_ms(&mut self, point: GridPoint) -> Result<f64> {
        self(point)
    }
}

/// Least-squares fit of `t = c0 + c_t·N + c_e·K·M·N` over the grid. The fitted
/// model has `parallelism = 1`; the evaluation coefficient is the effective one.
pub fn calibrate_cost_model<T: ProbeTimer>(timer: &mut T, grid: &[GridPoint]) -> Result<ProbeCostModel> {
    if grid.is_empty() {
        return Err(Error::SingularFit("empty calibration grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &p in grid {
        let t = timer.time_ms(p)?;
        let n = p.n_sample as f64;
        rows.push(([1.0, n, (p.k * p.m) as f64 * n], t));
    }
    let coef = least_squares3(&rows)?;
    Ok(ProbeCostModel {
        c0_ms: coef[0].max(0.0),
        transfer_ms_per_row: coef[1].max(0.0),
        eval_ms_per_row_pred: coef[2].max(0.0),
        parallelism: 1.0,
    })
}

/// Fits `[x0, x1, x2]` to targets; columns are rescaled before solving the
/// normal equations. A rank-deficient design with a zero third column falls
/// back to the two-parameter fit.
fn least_squares3(rows: &[([f64; 3], f64)]) -> Result<[f64; 3]> {
    let mut scale = [0.0f64; 3];
    for (x, _) in rows {
        for j in 0..3 {
            scale[j] = scale[j].max(x[j].abs());
        }
    }
    let active: Vec<usize> = (0..3).filter(|&j| scale[j] > 0.0).collect();
    let dims = distinct_design_rank(rows, &active);
    if dims < active.len() {
        return Err(Error::SingularFit(format!(
            "grid spans rank {dims}, need {} independent points",
            active.len()
        )));
    }
    let n = active.len();
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (x, y) in rows {
        let z: Vec<f64> = active.iter().map(|&j| x[j] / scale[j]).collect();
        for r in 0..n {
            for c in 0..n {
                a[r][c] += z[r] * z[c];
            }
            a[r][n] += z[r] * y;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::SingularFit("normal equations are singular".into()));
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for (i, &j) in active.iter().enumerate() {
        out[j] = a[i][n] / a[i][i] / scale[j];
    }
    Ok(out)
}

fn distinct_design_rank(rows: &[([f64; 3], f64)], active: &[usize]) -> usize {
    // rank via elimination on the (unscaled, normalized) design rows
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|(x, _)| {
            let v: Vec<f64> = active.iter().map(|&j| x[j]).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let cols = active.len();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())) else {
            break;
        };
        if m[p][c].abs() < 1e-9 {
            continue;
        }
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][c] / m[rank][c];
                for k in c..cols {
                    m[r][k] -= f * m[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}
