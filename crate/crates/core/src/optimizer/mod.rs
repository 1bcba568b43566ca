//! Cost-based plan selection with an optional risk gate in front of it.

pub mod exec;
pub mod plan;
pub mod session;

use crate::error::{Error, Result};

pub use exec::{exact_selectivities, execute};
pub use plan::{
    argmin, cost_all, cost_plan, enumerate_plans, explain, CandidatePlan, CardInputs, CostConstants, FilterCard,
    JoinCard, JoinSide, PlanKind,
};
pub use session::{exact_candidates, oracle_plan, Catalog, Estimator, PlanRecord, Session, SessionConfig};

/// Share of consecutive logged pairs whose plan hash differs. Records without a
/// logged hash are skipped, so pairs are formed over the logged subsequence.
pub fn plan_flip_rate(records: &[PlanRecord]) -> Result<f64> {
    let hashes: Vec<u64> = records.iter().filter_map(|r| r.plan_hash).collect();
    flip_rate_of(&hashes)
}

pub fn flip_rate_of(hashes: &[u64]) -> Result<f64> {
    if hashes.len() < 2 {
        return Err(Error::EmptyInput("flip rate needs at least two logged plans".into()));
    }
    let flips = hashes.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(flips as f64 / (hashes.len() - 1) as f64)
}

pub fn plan_coverage(records: &[PlanRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no plan records".into()));
    }
    let logged = records.iter().filter(|r| r.plan_hash.is_some()).count();
    Ok(logged as f64 / records.len() as f64)
}
