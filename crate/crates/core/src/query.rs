//! Predicates and parameterized queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::ColumnTable;

/// Comparison operator with its bound value(s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum CmpOp {
    Eq(i64),
    Lt(i64),
    Le(i64),
    Gt(i64),
    Ge(i64),
    /// Inclusive on both ends.
    Between(i64, i64),
}

impl CmpOp {
    #[inline]
    pub fn matches(&self, v: i64) -> bool {
        match *self {
            CmpOp::Eq(x) => v == x,
            CmpOp::Lt(x) => v < x,
            CmpOp::Le(x) => v <= x,
            CmpOp::Gt(x) => v > x,
            CmpOp::Ge(x) => v >= x,
            CmpOp::Between(lo, hi) => v >= lo && v <= hi,
        }
    }

    /// Inclusive value interval `[lo, hi]` covered by the operator, `None` when empty.
    pub fn interval(&self) -> Option<(i64, i64)> {
        let (lo, hi) = match *self {
            CmpOp::Eq(x) => (x, x),
            CmpOp::Lt(x) => (i64::MIN, x.checked_sub(1)?),
            CmpOp::Le(x) => (i64::MIN, x),
            CmpOp::Gt(x) => (x.checked_add(1)?, i64::MAX),
            CmpOp::Ge(x) => (x, i64::MAX),
            CmpOp::Between(lo, hi) => (lo, hi),
        };
        (lo <= hi).then_some((lo, hi))
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq(_) => "=",
            CmpOp::Lt(_) => "<",
            CmpOp::Le(_) => "<=",
            CmpOp::Gt(_) => ">",
            CmpOp::Ge(_) => ">=",
            CmpOp::Between(..) => "between",
        }
    }

    /// Bind values in declaration order.
    pub fn binds(&self) -> Vec<i64> {
        match *self {
            CmpOp::Eq(x) | CmpOp::Lt(x) | CmpOp::Le(x) | CmpOp::Gt(x) | CmpOp::Ge(x) => vec![x],
            CmpOp::Between(lo, hi) => vec![lo, hi],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    #[serde(flatten)]
    pub op: CmpOp,
}

impl Predicate {
    pub fn new(column: impl Into<String>, op: CmpOp) -> Self {
        Predicate {
            column: column.into(),
            op,
        }
    }

    pub fn eq(column: impl Into<String>, v: i64) -> Self {
        Self::new(column, CmpOp::Eq(v))
    }

    pub fn between(column: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self::new(column, CmpOp::Between(lo, hi))
    }
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.op {
            CmpOp::Between(lo, hi) => write!(f, "{} between {} and {}", self.column, lo, hi),
            op => write!(f, "{} {} {}", self.column, op.symbol(), op.binds()[0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub right_table: String,
    pub left_key: String,
    pub right_key: String,
    /// Filters applied to the right table.
    pub right_predicates: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub table: String,
    /// Conjunction over `table`.
    pub predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinSpec>,
}

impl Query {
    pub fn filter(id: u64, table: impl Into<String>, predicates: Vec<Predicate>) -> Self {
        Query {
            id,
            table: table.into(),
            predicates,
            join: None,
        }
    }

    /// Checks every referenced column exists.
    pub fn validate(&self, left: &ColumnTable, right: Option<&ColumnTable>) -> Result<()> {
        if left.name() != self.table {
            return Err(Error::UnknownTable(self.table.clone()));
        }
        for p in &self.predicates {
            left.column(&p.column)?;
        }
        if let Some(j) = &self.join {
            let right = right.ok_or_else(|| Error::UnknownTable(j.right_table.clone()))?;
            if right.name() != j.right_table {
                return Err(Error::UnknownTable(j.right_table.clone()));
            }
            left.column(&j.left_key)?;
            right.column(&j.right_key)?;
            for p in &j.right_predicates {
                right.column(&p.column)?;
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Query {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q{} {}:", self.id, self.table)?;
        for (i, p) in self.predicates.iter().enumerate() {
            write!(f, "{}{}", if i == 0 { " " } else { " and " }, p)?;
        }
        if let Some(j) = &self.join {
            write!(
                f,
                " join {} on {} = {}",
                j.right_table, j.left_key, j.right_key
            )?;
            for p in &j.right_predicates {
                write!(f, " and {}.{}", j.right_table, p)?;
            }
        }
        Ok(())
    }
}
