//! Candidate plans and their textbook cost formulas.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::query::Query;
use crate::table::ColumnTable;

/// Abstract cost constants. One cost unit is roughly one sequential row visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConstants {
    pub c_seq: f64,
    pub c_idx_probe: f64,
    pub c_fetch: f64,
    pub c_build: f64,
    pub c_probe: f64,
    /// Conversion used when plan costs feed the break-even check.
    pub ms_per_unit: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            c_seq: 1.0,
            c_idx_probe: 4.0,
            c_fetch: 2.0,
            c_build: 2.0,
            c_probe: 1.0,
            ms_per_unit: 1.5e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinSide {
    Left,
    Right,
}

impl JoinSide {
    pub fn other(self) -> JoinSide {
        match self {
            JoinSide::Left => JoinSide::Right,
            JoinSide::Right => JoinSide::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanKind {
    SeqScanFilter,
    /// Index range scan on conjunct `conjunct`, remaining conjuncts filtered.
    IndexScan { conjunct: usize, column: String },
    /// Row-id bitmaps from every indexed conjunct, ANDed, then fetched.
    BitmapAndScan { conjuncts: Vec<usize>, columns: Vec<String> },
    /// `outer` side drives index lookups into the other side.
    #[serde(rename = "NLJ")]
    NestedLoop { outer: JoinSide },
    /// Hash table built on `build`, probed with the other side.
    HashJoin { build: JoinSide },
}

impl PlanKind {
    pub fn label(&self) -> String {
        match self {
            PlanKind::SeqScanFilter => "SEQ_SCAN_FILTER".into(),
            PlanKind::IndexScan { column, .. } => format!("INDEX_SCAN({column})"),
            PlanKind::BitmapAndScan { columns, .. } => format!("BITMAP_AND_SCAN({})", columns.join(",")),
            PlanKind::NestedLoop { outer } => format!("NLJ(outer={outer:?})"),
            PlanKind::HashJoin { build } => format!("HASH_JOIN(build={build:?})"),
        }
    }

    /// Stable digest of kind, order and access paths. Bind values are excluded
    /// so that parameterized instances of the same plan share a hash.
    pub fn plan_hash(&self) -> u64 {
        let digest = Sha256::digest(self.label().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub kind: PlanKind,
    pub hash: u64,
    pub est_cost: f64,
    pub est_rows: f64,
}

/// Cardinality inputs for single-table plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCard {
    pub rows: f64,
    /// Selectivity of each conjunct, in query order.
    pub conjunct_sel: Vec<f64>,
    pub joint_sel: f64,
}

/// Cardinality inputs for two-table join plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinCard {
    pub left_rows: f64,
    pub right_rows: f64,
    pub left_sel: f64,
    pub right_sel: f64,
    /// Distinct join-key values per side.
    pub left_key_ndv: f64,
    pub right_key_ndv: f64,
    pub left_key_indexed: bool,
    pub right_key_indexed: bool,
    /// Selectivity of the first indexed filter conjunct on each side, used
    /// when that side drives a nested loop.
    #[serde(default)]
    pub left_index_sel: Option<f64>,
    #[serde(default)]
    pub right_index_sel: Option<f64>,
}

impl JoinCard {
    pub fn filtered(&self, side: JoinSide) -> f64 {
        match side {
            JoinSide::Left => self.left_rows * self.left_sel,
            JoinSide::Right => self.right_rows * self.right_sel,
        }
    }

    pub fn rows(&self, side: JoinSide) -> f64 {
        match side {
            JoinSide::Left => self.left_rows,
            JoinSide::Right => self.right_rows,
        }
    }

    fn key_ndv(&self, side: JoinSide) -> f64 {
        match side {
            JoinSide::Left => self.left_key_ndv,
            JoinSide::Right => self.right_key_ndv,
        }
        .max(1.0)
    }

    fn key_indexed(&self, side: JoinSide) -> bool {
        match side {
            JoinSide::Left => self.left_key_indexed,
            JoinSide::Right => self.right_key_indexed,
        }
    }

    /// Cost of producing the filtered rows of `side`: an index range scan on
    /// its first indexed conjunct when there is one, a full scan otherwise.
    fn access_cost(&self, side: JoinSide, c: &CostConstants) -> f64 {
        let index_sel = match side {
            JoinSide::Left => self.left_index_sel,
            JoinSide::Right => self.right_index_sel,
        };
        match index_sel {
            Some(s) => c.c_idx_probe + s * self.rows(side) * (c.c_idx_probe + c.c_fetch),
            None => self.rows(side) * c.c_seq,
        }
    }

    pub fn output_rows(&self) -> f64 {
        self.filtered(JoinSide::Left) * self.filtered(JoinSide::Right)
            / self.left_key_ndv.max(self.right_key_ndv).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CardInputs {
    Filter(FilterCard),
    Join(JoinCard),
}

pub fn enumerate_plans(query: &Query, left: &ColumnTable, right: Option<&ColumnTable>) -> Result<Vec<PlanKind>> {
    query.validate(left, right)?;
    if query.join.is_some() {
        let mut plans = Vec::with_capacity(4);
        for side in [JoinSide::Left, JoinSide::Right] {
            plans.push(PlanKind::NestedLoop { outer: side });
            plans.push(PlanKind::HashJoin { build: side });
        }
        return Ok(plans);
    }
    if query.predicates.is_empty() {
        return Err(Error::UnsupportedQuery("filter query without predicates".into()));
    }
    let mut plans = vec![PlanKind::SeqScanFilter];
    let indexed: Vec<usize> = query
        .predicates
        .iter()
        .enumerate()
        .filter(|(_, p)| left.is_indexed(&p.column))
        .map(|(i, _)| i)
        .collect();
    for &i in &indexed {
        plans.push(PlanKind::IndexScan {
            conjunct: i,
            column: query.predicates[i].column.clone(),
        });
    }
    if indexed.len() >= 2 {
        plans.push(PlanKind::BitmapAndScan {
            columns: indexed.iter().map(|&i| query.predicates[i].column.clone()).collect(),
            conjuncts: indexed,
        });
    }
    Ok(plans)
}

pub fn cost_plan(plan: &PlanKind, card: &CardInputs, c: &CostConstants) -> Result<f64> {
    let check = |x: f64, bound: f64| -> Result<()> {
        if !(x >= 0.0) || x > bound * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("cardinality input {x} outside [0, {bound}]")));
        }
        Ok(())
    };
    match (plan, card) {
        (PlanKind::SeqScanFilter | PlanKind::IndexScan { .. } | PlanKind::BitmapAndScan { .. }, CardInputs::Filter(f)) => {
            check(f.rows, f64::MAX)?;
            for &s in f.conjunct_sel.iter().chain([&f.joint_sel]) {
                check(s, 1.0)?;
            }
            Ok(match plan {
                PlanKind::SeqScanFilter => f.rows * c.c_seq,
                PlanKind::IndexScan { conjunct, .. } => {
                    let sel = *f.conjunct_sel.get(*conjunct).ok_or_else(|| {
                        Error::InvalidParameter(format!("no selectivity for conjunct {conjunct}"))
                    })?;
                    c.c_idx_probe + sel * f.rows * (c.c_idx_probe + c.c_fetch)
                }
                PlanKind::BitmapAndScan { conjuncts, .. } => {
                    let mut cost = 0.0;
                    for &i in conjuncts {
                        let sel = *f.conjunct_sel.get(i).ok_or_else(|| {
                            Error::InvalidParameter(format!("no selectivity for conjunct {i}"))
                        })?;
                        cost += c.c_idx_probe + sel * f.rows * c.c_idx_probe;
                    }
                    cost + f.joint_sel * f.rows * c.c_fetch
                }
                _ => unreachable!(),
            })
        }
        (PlanKind::NestedLoop { outer }, CardInputs::Join(j)) => {
            check_join(j, &check)?;
            let inner = outer.other();
            let per_outer = if j.key_indexed(inner) {
                c.c_idx_probe + j.rows(inner) / j.key_ndv(inner) * c.c_fetch
            } else {
                j.rows(inner) * c.c_seq
            };
            Ok(j.access_cost(*outer, c) + j.filtered(*outer) * per_outer)
        }
        (PlanKind::HashJoin { build }, CardInputs::Join(j)) => {
            check_join(j, &check)?;
            let scans = (j.left_rows + j.right_rows) * c.c_seq;
            Ok(scans + j.filtered(*build) * c.c_build + j.filtered(build.other()) * c.c_probe)
        }
        _ => Err(Error::UnsupportedQuery(format!(
            "plan {} does not match cardinality inputs",
            plan.label()
        ))),
    }
}

fn check_join(j: &JoinCard, check: &dyn Fn(f64, f64) -> Result<()>) -> Result<()> {
    check(j.left_rows, f64::MAX)?;
    check(j.right_rows, f64::MAX)?;
    for s in [j.left_index_sel, j.right_index_sel].into_iter().flatten() {
        check(s, 1.0)?;
    }
    check(j.left_sel, 1.0)?;
    check(j.right_sel, 1.0)
}

/// Costs every plan; returns candidates in enumeration order.
pub fn cost_all(plans: &[PlanKind], card: &CardInputs, c: &CostConstants) -> Result<Vec<CandidatePlan>> {
    let est_rows = match card {
        CardInputs::Filter(f) => f.rows * f.joint_sel,
        CardInputs::Join(j) => j.output_rows(),
    };
    plans
        .iter()
        .map(|k| {
            Ok(CandidatePlan {
                hash: k.plan_hash(),
                est_cost: cost_plan(k, card, c)?,
                est_rows,
                kind: k.clone(),
            })
        })
        .collect()
}

/// Lowest cost; ties broken by lowest plan hash.
pub fn argmin(candidates: &[CandidatePlan]) -> Option<&CandidatePlan> {
    candidates.iter().min_by(|a, b| {
        a.est_cost
            .total_cmp(&b.est_cost)
            .then_with(|| a.hash.cmp(&b.hash))
    })
}

/// Human-readable plan explanation.
pub fn explain(query: &Query, chosen: &CandidatePlan, candidates: &[CandidatePlan], actual_rows: Option<u64>) -> String {
    let mut s = format!("{query}\n");
    for c in candidates {
        let mark = if c.hash == chosen.hash { "*" } else { " " };
        s.push_str(&format!(
            " {mark} {:<36} cost={:>14.1} est_rows={:>12.1}\n",
            c.kind.label(),
            c.est_cost,
            c.est_rows
        ));
    }
    if let Some(a) = actual_rows {
        s.push_str(&format!("   actual_rows={a}\n"));
    }
    s
}
