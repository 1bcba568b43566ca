//! Executes a chosen plan over the in-memory tables and returns the true row count.

use std::collections::HashMap;

use crate::engine::Bitmap;
use crate::error::{Error, Result};
use crate::optimizer::plan::{JoinSide, PlanKind};
use crate::query::{CmpOp, Predicate, Query};
use crate::table::ColumnTable;

/// A predicate resolved to its column slice and closed interval.
struct Bound<'a> {
    values: &'a [i64],
    lo: i64,
    hi: i64,
}

impl Bound<'_> {
    #[inline]
    fn hit(&self, row: usize) -> bool {
        let v = self.values[row];
        v >= self.lo && v <= self.hi
    }
}

fn bind<'a>(table: &'a ColumnTable, preds: &[Predicate]) -> Result<Option<Vec<Bound<'a>>>> {
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        let values = table.column(&p.column)?;
        match p.op.interval() {
            Some((lo, hi)) => out.push(Bound { values, lo, hi }),
            // an empty interval matches nothing
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

/// Column-at-a-time scan: one word bitmap per conjunct, ANDed.
fn scan_bitmap(table: &ColumnTable, preds: &[Predicate]) -> Result<Bitmap> {
    let mut acc = Bitmap::ones(table.n_rows());
    for p in preds {
        acc.and_assign(&Bitmap::from_values(table.column(&p.column)?, &p.op));
    }
    Ok(acc)
}

fn seq_rows(table: &ColumnTable, preds: &[Predicate]) -> Result<Vec<u32>> {
    let bm = scan_bitmap(table, preds)?;
    let mut rows = Vec::with_capacity(bm.count_ones() as usize);
    for (w, &word) in bm.words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            rows.push((w * 64) as u32 + bits.trailing_zeros());
            bits &= bits - 1;
        }
    }
    Ok(rows)
}

fn seq_count(table: &ColumnTable, preds: &[Predicate]) -> Result<u64> {
    Ok(scan_bitmap(table, preds)?.count_ones())
}

fn index_count(table: &ColumnTable, preds: &[Predicate], conjunct: usize) -> Result<u64> {
    let p = preds
        .get(conjunct)
        .ok_or_else(|| Error::InvalidParameter(format!("conjunct {conjunct} out of range")))?;
    let index = table.index(&p.column).ok_or_else(|| {
        Error::UnsupportedQuery(format!("no index on {}.{}", table.name(), p.column))
    })?;
    let rest: Vec<Predicate> = preds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != conjunct)
        .map(|(_, p)| p.clone())
        .collect();
    let Some(bounds) = bind(table, &rest)? else {
        return Ok(0);
    };
    Ok(index
        .lookup(&p.op)
        .iter()
        .filter(|&&r| bounds.iter().all(|b| b.hit(r as usize)))
        .count() as u64)
}

fn bitmap_count(table: &ColumnTable, preds: &[Predicate], conjuncts: &[usize]) -> Result<u64> {
    let words = table.n_rows().div_ceil(64);
    let mut acc: Option<Vec<u64>> = None;
    for &i in conjuncts {
        let p = preds
            .get(i)
            .ok_or_else(|| Error::InvalidParameter(format!("conjunct {i} out of range")))?;
        let index = table.index(&p.column).ok_or_else(|| {
            Error::UnsupportedQuery(format!("no index on {}.{}", table.name(), p.column))
        })?;
        let mut bm = vec![0u64; words];
        for &r in index.lookup(&p.op) {
            bm[r as usize / 64] |= 1 << (r % 64);
        }
        acc = Some(match acc {
            None => bm,
            Some(mut a) => {
                a.iter_mut().zip(&bm).for_each(|(x, y)| *x &= y);
                a
            }
        });
    }
    let acc = acc.ok_or_else(|| Error::InvalidParameter("bitmap plan without conjuncts".into()))?;
    let rest: Vec<Predicate> = preds
        .iter()
        .enumerate()
        .filter(|(i, _)| !conjuncts.contains(i))
        .map(|(_, p)| p.clone())
        .collect();
    let Some(bounds) = bind(table, &rest)? else {
        return Ok(0);
    };
    let mut n = 0u64;
    for (w, &word) in acc.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let r = w * 64 + bits.trailing_zeros() as usize;
            bits &= bits - 1;
            if bounds.iter().all(|b| b.hit(r)) {
                n += 1;
            }
        }
    }
    Ok(n)
}

fn join_inputs<'a>(
    query: &'a Query,
    left: &'a ColumnTable,
    right: &'a ColumnTable,
    side: JoinSide,
) -> Result<(&'a ColumnTable, &'a [Predicate], &'a str)> {
    let j = query
        .join
        .as_ref()
        .ok_or_else(|| Error::UnsupportedQuery("join plan on a filter query".into()))?;
    Ok(match side {
        JoinSide::Left => (left, &query.predicates, &j.left_key),
        JoinSide::Right => (right, &j.right_predicates, &j.right_key),
    })
}

fn hash_join_count(query: &Query, left: &ColumnTable, right: &ColumnTable, build: JoinSide) -> Result<u64> {
    let (bt, bp, bk) = join_inputs(query, left, right, build)?;
    let (pt, pp, pk) = join_inputs(query, left, right, build.other())?;
    let bkeys = bt.column(bk)?;
    let mut ht: HashMap<i64, u64> = HashMap::new();
    for r in seq_rows(bt, bp)? {
        *ht.entry(bkeys[r as usize]).or_default() += 1;
    }
    let pkeys = pt.column(pk)?;
    Ok(seq_rows(pt, pp)?
        .into_iter()
        .map(|r| ht.get(&pkeys[r as usize]).copied().unwrap_or(0))
        .sum())
}

fn nested_loop_count(query: &Query, left: &ColumnTable, right: &ColumnTable, outer: JoinSide) -> Result<u64> {
    let (ot, op, ok) = join_inputs(query, left, right, outer)?;
    let (it, ip, ik) = join_inputs(query, left, right, outer.other())?;
    let okeys = ot.column(ok)?;
    let Some(inner) = bind(it, ip)? else {
        return Ok(0);
    };
    let outer_rows = match op.iter().position(|p| ot.is_indexed(&p.column)) {
        Some(i) => {
            let index = ot.index(&op[i].column).expect("indexed column");
            let rest: Vec<Predicate> = op.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p.clone()).collect();
            match bind(ot, &rest)? {
                Some(b) => index
                    .lookup(&op[i].op)
                    .iter()
                    .copied()
                    .filter(|&r| b.iter().all(|x| x.hit(r as usize)))
                    .collect(),
                None => Vec::new(),
            }
        }
        None => seq_rows(ot, op)?,
    };
    let mut n = 0u64;
    match it.index(ik) {
        Some(index) => {
            for r in outer_rows {
                let key = okeys[r as usize];
                n += index
                    .lookup(&CmpOp::Eq(key))
                    .iter()
                    .filter(|&&i| inner.iter().all(|b| b.hit(i as usize)))
                    .count() as u64;
            }
        }
        None => {
            let ikeys = it.column(ik)?;
            for r in outer_rows {
                let key = okeys[r as usize];
                n += (0..it.n_rows())
                    .filter(|&i| ikeys[i] == key && inner.iter().all(|b| b.hit(i)))
                    .count() as u64;
            }
        }
    }
    Ok(n)
}

/// Runs `plan` and returns the number of result rows.
pub fn execute(plan: &PlanKind, query: &Query, left: &ColumnTable, right: Option<&ColumnTable>) -> Result<u64> {
    match plan {
        PlanKind::SeqScanFilter => seq_count(left, &query.predicates),
        PlanKind::IndexScan { conjunct, .. } => index_count(left, &query.predicates, *conjunct),
        PlanKind::BitmapAndScan { conjuncts, .. } => bitmap_count(left, &query.predicates, conjuncts),
        PlanKind::NestedLoop { outer } | PlanKind::HashJoin { build: outer } => {
            let right = right.ok_or_else(|| Error::UnsupportedQuery("join plan without right table".into()))?;
            match plan {
                PlanKind::NestedLoop { .. } => nested_loop_count(query, left, right, *outer),
                _ => hash_join_count(query, left, right, *outer),
            }
        }
    }
}

/// Exact selectivity of each conjunct and of the conjunction, by index count
/// where possible and a full scan otherwise.
pub fn exact_selectivities(table: &ColumnTable, preds: &[Predicate]) -> Result<(Vec<f64>, f64)> {
    let n = table.n_rows().max(1) as f64;
    let mut marginals = Vec::with_capacity(preds.len());
    for p in preds {
        let c = match table.index(&p.column) {
            Some(ix) => ix.count(&p.op) as u64,
            None => seq_count(table, std::slice::from_ref(p))?,
        };
        marginals.push(c as f64 / n);
    }
    let joint = seq_count(table, preds)? as f64 / n;
    Ok((marginals, joint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_table, TableSpec};
    use crate::optimizer::plan::enumerate_plans;
    use crate::query::JoinSpec;

    fn naive(table: &ColumnTable, preds: &[Predicate]) -> u64 {
        let cols: Vec<&[i64]> = preds.iter().map(|p| table.column(&p.column).unwrap()).collect();
        (0..table.n_rows())
            .filter(|&r| preds.iter().zip(&cols).all(|(p, c)| p.op.matches(c[r])))
            .count() as u64
    }

    #[test]
    fn every_filter_plan_returns_true_count() {
        let t = build_table(&TableSpec::orders(20_000, 0.8, 3)).unwrap();
        let queries = [
            vec![Predicate::eq("status", 0), Predicate::between("day", 0, 6)],
            vec![Predicate::eq("status", 3), Predicate::between("day", 100, 200), Predicate::between("p0", 0, 5000)],
            vec![Predicate::between("day", 50, 40), Predicate::eq("status", 1)],
            vec![Predicate::eq("status", 99)],
        ];
        for preds in queries {
            let q = Query::filter(0, "orders", preds.clone());
            let truth = naive(&t, &preds);
            for plan in enumerate_plans(&q, &t, None).unwrap() {
                assert_eq!(execute(&plan, &q, &t, None).unwrap(), truth, "{}", plan.label());
            }
        }
    }

    #[test]
    fn every_join_plan_returns_true_count() {
        let l = ColumnTable::new(
            "l",
            vec![
                ("k".into(), (0..500).map(|i| i % 37).collect()),
                ("a".into(), (0..500).map(|i| i % 5).collect()),
            ],
        )
        .unwrap()
        .with_indexes(&["k"])
        .unwrap();
        let r = ColumnTable::new(
            "r",
            vec![
                ("id".into(), (0..80).map(|i| i % 41).collect()),
                ("b".into(), (0..80).map(|i| i % 3).collect()),
            ],
        )
        .unwrap()
        .with_indexes(&["id"])
        .unwrap();
        let q = Query {
            id: 1,
            table: "l".into(),
            predicates: vec![Predicate::eq("a", 2)],
            join: Some(JoinSpec {
                right_table: "r".into(),
                left_key: "k".into(),
                right_key: "id".into(),
                right_predicates: vec![Predicate::between("b", 0, 1)],
            }),
        };
        let lk = l.column("k").unwrap();
        let la = l.column("a").unwrap();
        let rk = r.column("id").unwrap();
        let rb = r.column("b").unwrap();
        let mut truth = 0;
        for i in 0..500 {
            for j in 0..80 {
                if la[i] == 2 && rb[j] <= 1 && lk[i] == rk[j] {
                    truth += 1;
                }
            }
        }
        assert!(truth > 0);
        let plans = enumerate_plans(&q, &l, Some(&r)).unwrap();
        assert_eq!(plans.len(), 4);
        for plan in plans {
            assert_eq!(execute(&plan, &q, &l, Some(&r)).unwrap(), truth, "{}", plan.label());
        }
    }
}
