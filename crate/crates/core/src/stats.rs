//! Per-column statistics: equi-depth histogram, most-common values, NDV.
//!
//! These are the optimizer's beliefs. They are built once and never refreshed
//! implicitly, so mutating the table afterwards (see [`inject_staleness`])
//! reproduces the stale-statistics regime.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_columns, rng, ColumnSpec, TableSpec, ValueDraw};
use crate::engine::sample::sample_uniform;
use crate::error::{Error, Result};
use crate::query::{CmpOp, Predicate};
use crate::table::ColumnTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Smallest value in the bucket (inclusive).
    pub lo: i64,
    /// Largest value in the bucket (inclusive).
    pub hi: i64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub buckets: Vec<Bucket>,
    /// `(value, frequency)` sorted by descending frequency.
    pub mcv: Vec<(i64, f64)>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    pub fn min(&self) -> i64 {
        self.buckets.first().map(|b| b.lo).unwrap_or(0)
    }

    pub fn max(&self) -> i64 {
        self.buckets.last().map(|b| b.hi).unwrap_or(0)
    }

    pub fn mcv_frequency(&self, value: i64) -> Option<f64> {
        self.mcv.iter().find(|(v, _)| *v == value).map(|(_, f)| *f)
    }

    /// Fraction of rows in `[lo, hi]`, interpolating linearly within buckets.
    fn range_fraction(&self, lo: i64, hi: i64) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for b in &self.buckets {
            let a = lo.max(b.lo);
            let z = hi.min(b.hi);
            if a > z {
                continue;
            }
            let width = (b.hi as f64) - (b.lo as f64) + 1.0;
            let overlap = (z as f64) - (a as f64) + 1.0;
            acc += b.count as f64 * (overlap / width);
        }
        (acc / total).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub histogram: Histogram,
    pub ndv_hist: u64,
    pub built_at_rows: u64,
    pub resolution: usize,
}

impl ColumnStats {
    /// Model selectivity of one predicate over this column.
    pub fn selectivity(&self, op: &CmpOp) -> f64 {
        let floor = 1.0 / self.built_at_rows.max(1) as f64;
        let Some((lo, hi)) = op.interval() else {
            return 0.0;
        };
        let (min, max) = (self.histogram.min(), self.histogram.max());
        if lo <= min && hi >= max {
            return 1.0;
        }
        if let CmpOp::Eq(v) = op {
            if let Some(f) = self.histogram.mcv_frequency(*v) {
                return f;
            }
            if *v < min || *v > max {
                return floor;
            }
            let mcv_mass: f64 = self.histogram.mcv.iter().map(|(_, f)| f).sum();
            let rest = self.ndv_hist as i64 - self.histogram.mcv.len() as i64;
            if rest <= 0 {
                return floor;
            }
            return ((1.0 - mcv_mass) / rest as f64).max(floor).min(1.0);
        }
        self.histogram.range_fraction(lo, hi)
    }
}

/// Statistics for every analyzed column of one table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub table: String,
    pub columns: BTreeMap<String, ColumnStats>,
    /// Multi-column most-common value pairs, keyed by `(col_a, col_b)`.
    #[serde(default)]
    pub extended: BTreeMap<String, PairStats>,
}

/// Joint frequency list over a column pair, used by the extended-statistics baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub col_a: String,
    pub col_b: String,
    /// `((a, b), frequency)`.
    pub pairs: Vec<((i64, i64), f64)>,
}

fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

impl StatsSnapshot {
    pub fn new(table: impl Into<String>) -> Self {
        StatsSnapshot {
            table: table.into(),
            ..Default::default()
        }
    }

    pub fn analyze(
        table: &ColumnTable,
        columns: &[&str],
        resolution: usize,
        mcv_count: usize,
    ) -> Result<Self> {
        let mut snap = StatsSnapshot::new(table.name());
        for c in columns {
            snap.columns
                .insert(c.to_string(), build_stats(table, c, resolution, mcv_count)?);
        }
        Ok(snap)
    }

    pub fn get(&self, column: &str) -> Result<&ColumnStats> {
        self.columns
            .get(column)
            .ok_or_else(|| Error::MissingStatistics(column.to_string()))
    }

    pub fn add_extended(&mut self, table: &ColumnTable, a: &str, b: &str, top: usize) -> Result<()> {
        let ca = table.column(a)?;
        let cb = table.column(b)?;
        let mut counts: HashMap<(i64, i64), u64> = HashMap::new();
        for (x, y) in ca.iter().zip(cb) {
            *counts.entry((*x, *y)).or_default() += 1;
        }
        let n = table.n_rows().max(1) as f64;
        let mut pairs: Vec<((i64, i64), u64)> = counts.into_iter().collect();
        pairs.sort_by(|l, r| r.1.cmp(&l.1).then(l.0.cmp(&r.0)));
        pairs.truncate(top);
        let pairs = pairs.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
        self.extended.insert(
            pair_key(a, b),
            PairStats {
                col_a: a.to_string(),
                col_b: b.to_string(),
                pairs,
            },
        );
        Ok(())
    }

    /// Human-readable dump: NDV, buckets and MCVs per column.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "table {}", self.table);
        for (name, st) in &self.columns {
            let _ = writeln!(
                s,
                "  column {name}: ndv={} rows={} buckets={} (resolution {})",
                st.ndv_hist,
                st.built_at_rows,
                st.histogram.buckets.len(),
                st.resolution
            );
            for b in &st.histogram.buckets {
                let _ = writeln!(s, "    [{}, {}] count={}", b.lo, b.hi, b.count);
            }
            let mcv: Vec<String> = st
                .histogram
                .mcv
                .iter()
                .map(|(v, f)| format!("{v}:{f:.4}"))
                .collect();
            let _ = writeln!(s, "    mcv {}", mcv.join(" "));
        }
        for p in self.extended.values() {
            let _ = writeln!(s, "  extended ({}, {}): {} pairs", p.col_a, p.col_b, p.pairs.len());
        }
        s
    }
}

pub fn build_stats(
    table: &ColumnTable,
    column: &str,
    resolution: usize,
    mcv_count: usize,
) -> Result<ColumnStats> {
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be >= 1".into()));
    }
    let values = table.column(column)?;
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_unstable();

    // distinct values with counts, ascending
    let mut distinct: Vec<(i64, u64)> = Vec::new();
    for v in sorted {
        match distinct.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => distinct.push((v, 1)),
        }
    }

    let depth = (n as f64 / resolution as f64).max(1.0);
    let mut buckets: Vec<Bucket> = Vec::new();
    let mut open: Option<Bucket> = None;
    let mut cum = 0u64;
    for &(v, c) in &distinct {
        let b = open.get_or_insert(Bucket { lo: v, hi: v, count: 0 });
        b.hi = v;
        b.count += c;
        cum += c;
        // close once the cumulative count reaches the next depth boundary
        let boundary = ((buckets.len() + 1) as f64 * depth).round() as u64;
        if cum >= boundary && buckets.len() + 1 < resolution {
            buckets.push(open.take().unwrap());
        }
    }
    if let Some(b) = open {
        buckets.push(b);
    }

    let mut by_freq = distinct.clone();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mcv = by_freq
        .into_iter()
        .take(mcv_count)
        .map(|(v, c)| (v, c as f64 / n.max(1) as f64))
        .collect();

    Ok(ColumnStats {
        histogram: Histogram { buckets, mcv },
        ndv_hist: distinct.len().max(1) as u64,
        built_at_rows: n as u64,
        resolution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdvMethod {
    Exact,
    SampleGee,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdvEstimate {
    pub ndv_est: u64,
    pub method: NdvMethod,
}

/// Current distinct count: exact when `sample_fraction == 1`, otherwise the GEE
/// estimator `sqrt(N/n)·f1 + (d − f1)` over a uniform sample.
pub fn estimate_ndv_current(
    table: &ColumnTable,
    column: &str,
    sample_fraction: f64,
    seed: u64,
) -> Result<NdvEstimate> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sample fraction must be in (0, 1], got {sample_fraction}"
        )));
    }
    let values = table.column(column)?;
    let n_rows = values.len();
    if sample_fraction >= 1.0 {
        let d = values.iter().collect::<HashSet<_>>().len();
        return Ok(NdvEstimate {
            ndv_est: d.max(1) as u64,
            method: NdvMethod::Exact,
        });
    }
    let n = ((n_rows as f64 * sample_fraction).ceil() as usize).clamp(1, n_rows.max(1));
    let rows = sample_uniform(n_rows, n, seed)?;
    let mut counts: HashMap<i64, u32> = HashMap::new();
    for r in rows {
        *counts.entry(values[r as usize]).or_default() += 1;
    }
    let d = counts.len() as f64;
    let f1 = counts.values().filter(|&&c| c == 1).count() as f64;
    let est = ((n_rows as f64 / n as f64).sqrt() * f1 + (d - f1)).round();
    Ok(NdvEstimate {
        ndv_est: est.clamp(d.max(1.0), n_rows.max(1) as f64) as u64,
        method: NdvMethod::SampleGee,
    })
}

/// Model selectivity of a conjunction under the independence assumption.
pub fn estimate_selectivity(stats: &StatsSnapshot, predicates: &[Predicate]) -> Result<f64> {
    let mut s = 1.0;
    for p in predicates {
        s *= stats.get(&p.column)?.selectivity(&p.op);
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Conjunction estimate that replaces the product with multi-column frequencies
/// where an extended pair list covers two of the predicates. Approximates the
/// "extended statistics" baseline.
pub fn estimate_selectivity_extended(stats: &StatsSnapshot, predicates: &[Predicate]) -> Result<f64> {
    if predicates.len() == 2 {
        let (a, b) = (&predicates[0], &predicates[1]);
        if let Some(ps) = stats.extended.get(&pair_key(&a.column, &b.column)) {
            let (pa, pb) = if ps.col_a == a.column { (a, b) } else { (b, a) };
            let listed: f64 = ps.pairs.iter().map(|(_, f)| f).sum();
            let hit: f64 = ps
                .pairs
                .iter()
                .filter(|((x, y), _)| pa.op.matches(*x) && pb.op.matches(*y))
                .map(|(_, f)| f)
                .sum();
            let sa = stats.get(&pa.column)?.selectivity(&pa.op);
            let sb = stats.get(&pb.column)?.selectivity(&pb.op);
            let listed_a: f64 = ps.pairs.iter().filter(|((x, _), _)| pa.op.matches(*x)).map(|(_, f)| f).sum();
            let listed_b: f64 = ps.pairs.iter().filter(|((_, y), _)| pb.op.matches(*y)).map(|(_, f)| f).sum();
            let rest = 1.0 - listed;
            let residual = if rest > 1e-12 {
                let ra = ((sa - listed_a) / rest).clamp(0.0, 1.0);
                let rb = ((sb - listed_b) / rest).clamp(0.0, 1.0);
                rest * ra * rb
            } else {
                0.0
            };
            return Ok((hit + residual).clamp(0.0, 1.0));
        }
    }
    estimate_selectivity(stats, predicates)
}

/// A change applied to a table after statistics were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mutation", rename_all = "snake_case")]
pub enum Mutation {
    /// Append rows; `columns` must describe every table column.
    Append {
        n_rows: usize,
        columns: Vec<ColumnSpec>,
        seed: u64,
    },
    /// Move a fraction of the rows holding `from` to values drawn from `to`.
    Reassign {
        column: String,
        from: i64,
        fraction: f64,
        to: ValueDraw,
        seed: u64,
    },
}

/// Applies `mutations` to the table. Existing [`StatsSnapshot`]s are untouched.
pub fn inject_staleness(table: &mut ColumnTable, mutations: &[Mutation]) -> Result<()> {
    use rand::Rng;
    for m in mutations {
        match m {
            Mutation::Append { n_rows, columns, seed } => {
                if *n_rows == 0 {
                    continue;
                }
                for c in columns {
                    if !table.has_column(&c.name) {
                        return Err(Error::UnknownColumn {
                            table: table.name().to_string(),
                            column: c.name.clone(),
                        });
                    }
                }
                let spec = TableSpec {
                    name: table.name().to_string(),
                    n_rows: *n_rows,
                    seed: *seed,
                    columns: columns.clone(),
                };
                let new = gen_columns(&spec, *n_rows, *seed, &BTreeMap::new())?;
                table.append_rows(new)?;
            }
            Mutation::Reassign { column, from, fraction, to, seed } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::InvalidParameter(format!("fraction {fraction} out of range")));
                }
                let mut r = rng(*seed);
                let col = table.column_mut(column)?;
                for v in col.iter_mut() {
                    if *v == *from && r.gen_bool(*fraction) {
                        *v = to.draw(&mut r);
                    }
                }
                table.rebuild_indexes();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_table, gen_zipf_column, ColumnDist};
    use crate::risky_gate::compute_drift;

    fn uniform_table() -> ColumnTable {
        let v: Vec<i64> = (0..10_000).map(|i| i % 100).collect();
        ColumnTable::new("u", vec![("x".into(), v)]).unwrap()
    }

    fn zipf_table() -> ColumnTable {
        let v = gen_zipf_column(200_000, 8, 1.2, 5).unwrap();
        ColumnTable::new("z", vec![("s".into(), v)]).unwrap()
    }

    #[test]
    fn equi_depth_on_uniform() {
        let st = build_stats(&uniform_table(), "x", 10, 0).unwrap();
        assert_eq!(st.histogram.buckets.len(), 10);
        assert!(st.histogram.buckets.iter().all(|b| b.count == 1000));
        assert!(st.histogram.buckets.windows(2).all(|w| w[0].hi < w[1].lo));
        assert_eq!(st.ndv_hist, 100);
    }

    #[test]
    fn single_bucket_covers_domain() {
        let st = build_stats(&uniform_table(), "x", 1, 0).unwrap();
        assert_eq!(st.histogram.buckets, vec![Bucket { lo: 0, hi: 99, count: 10_000 }]);
    }

    #[test]
    fn mcv_matches_exhaustive_counts() {
        let t = zipf_table();
        let st = build_stats(&t, "s", 10, 8).unwrap();
        assert_eq!(st.histogram.mcv.len(), 8);
        let col = t.column("s").unwrap();
        for (v, f) in &st.histogram.mcv {
            let exact = col.iter().filter(|&&x| x == *v).count() as f64 / col.len() as f64;
            assert_eq!(*f, exact);
        }
        assert_eq!(st.histogram.total(), 200_000);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_stats(&uniform_table(), "x", 0, 0).is_err());
        assert!(build_stats(&uniform_table(), "nope", 4, 0).is_err());
        assert!(estimate_ndv_current(&uniform_table(), "x", 0.0, 1).is_err());
        assert!(estimate_ndv_current(&uniform_table(), "x", 1.5, 1).is_err());
    }

    #[test]
    fn exact_ndv_and_zero_drift() {
        let t = zipf_table();
        let st = build_stats(&t, "s", 10, 8).unwrap();
        let est = estimate_ndv_current(&t, "s", 1.0, 0).unwrap();
        assert_eq!(est.ndv_est, 8);
        assert_eq!(compute_drift(st.ndv_hist, est.ndv_est).unwrap(), 0.0);
    }

    #[test]
    fn sampled_ndv_is_reasonable() {
        let t = uniform_table();
        let est = estimate_ndv_current(&t, "x", 0.1, 3).unwrap();
        assert_eq!(est.method, NdvMethod::SampleGee);
        assert!((90..=110).contains(&est.ndv_est), "{}", est.ndv_est);
    }

    #[test]
    fn doubling_distinct_count_gives_drift_one() {
        let mut t = zipf_table();
        let st = build_stats(&t, "s", 10, 8).unwrap();
        // append rows whose values are 8..15
        let mut shifted = gen_zipf_column(200_000, 8, 1.2, 9).unwrap();
        shifted.iter_mut().for_each(|v| *v += 8);
        let mut extra = BTreeMap::new();
        extra.insert("s".to_string(), shifted);
        t.append_rows(extra).unwrap();
        let est = estimate_ndv_current(&t, "s", 1.0, 0).unwrap();
        assert_eq!(est.ndv_est, 2 * st.ndv_hist);
        assert_eq!(compute_drift(st.ndv_hist, est.ndv_est).unwrap(), 1.0);
    }

    #[test]
    fn mcv_equality_and_product_rule() {
        let t = zipf_table();
        let snap = StatsSnapshot::analyze(&t, &["s"], 10, 8).unwrap();
        let f0 = snap.get("s").unwrap().histogram.mcv_frequency(0).unwrap();
        let exact = t.column("s").unwrap().iter().filter(|&&x| x == 0).count() as f64 / 200_000.0;
        assert_eq!(f0, exact);
        assert_eq!(estimate_selectivity(&snap, &[Predicate::eq("s", 0)]).unwrap(), exact);
        assert_eq!(
            estimate_selectivity(&snap, &[Predicate::between("s", 0, 7)]).unwrap(),
            1.0
        );

        let u = ColumnTable::new(
            "u",
            vec![
                ("a".into(), (0..1000).map(|i| i % 2).collect()),
                ("b".into(), (0..1000).map(|i| (i / 2) % 2).collect()),
            ],
        )
        .unwrap();
        let snap = StatsSnapshot::analyze(&u, &["a", "b"], 4, 2).unwrap();
        let s = estimate_selectivity(&snap, &[Predicate::eq("a", 1), Predicate::eq("b", 0)]).unwrap();
        assert_eq!(s, 0.25);
        assert!(matches!(
            estimate_selectivity(&snap, &[Predicate::eq("c", 0)]),
            Err(Error::MissingStatistics(_))
        ));
    }

    #[test]
    fn non_mcv_equality_fallback() {
        let t = uniform_table();
        let st = build_stats(&t, "x", 10, 10).unwrap();
        // (1 - 10 * 0.01) / (100 - 10)
        let s = st.selectivity(&CmpOp::Eq(55));
        assert!((s - 0.01).abs() < 1e-12);
        assert_eq!(st.selectivity(&CmpOp::Eq(1000)), 1.0 / 10_000.0);
    }

    #[test]
    fn append_and_noop_staleness() {
        let mut t = build_table(&TableSpec::orders(50_000, 0.8, 1)).unwrap();
        let snap = StatsSnapshot::analyze(&t, &["status", "day"], 10, 8).unwrap();
        inject_staleness(&mut t, &[]).unwrap();
        let d = compute_drift(
            snap.get("day").unwrap().ndv_hist,
            estimate_ndv_current(&t, "day", 1.0, 0).unwrap().ndv_est,
        )
        .unwrap();
        assert_eq!(d, 0.0);

        let mut cols = TableSpec::orders(1, 0.8, 1).columns;
        cols[0].dist = ColumnDist::Uniform { lo: 100, hi: 199 };
        let before = snap.clone();
        inject_staleness(
            &mut t,
            &[Mutation::Append { n_rows: 100_000, columns: cols, seed: 4 }],
        )
        .unwrap();
        assert_eq!(snap, before);
        assert_eq!(t.n_rows(), 150_000);
        assert_eq!(estimate_ndv_current(&t, "status", 1.0, 0).unwrap().ndv_est, 108);
        assert_eq!(snap.get("status").unwrap().ndv_hist, 8);
    }

    #[test]
    fn unknown_column_mutation_rejected() {
        let mut t = uniform_table();
        let m = Mutation::Reassign {
            column: "q".into(),
            from: 0,
            fraction: 0.5,
            to: ValueDraw::Choice { values: vec![1] },
            seed: 0,
        };
        assert!(inject_staleness(&mut t, &[m]).is_err());
    }

    #[test]
    fn shifted_mass_breaks_estimate() {
        let mut t = zipf_table();
        let snap = StatsSnapshot::analyze(&t, &["s"], 10, 8).unwrap();
        // move rank-1 mass from ~0.447 to ~0.2
        inject_staleness(
            &mut t,
            &[Mutation::Reassign {
                column: "s".into(),
                from: 0,
                fraction: 1.0 - 0.2 / 0.447,
                to: ValueDraw::Uniform { lo: 1, hi: 7 },
                seed: 2,
            }],
        )
        .unwrap();
        let truth = t.column("s").unwrap().iter().filter(|&&x| x == 0).count() as f64
            / t.n_rows() as f64;
        let est = estimate_selectivity(&snap, &[Predicate::eq("s", 0)]).unwrap();
        assert!((est - truth).abs() > 0.2, "est {est} truth {truth}");
    }

    #[test]
    fn extended_stats_capture_correlation() {
        let t = build_table(&TableSpec::orders(100_000, 0.8, 3)).unwrap();
        let mut snap = StatsSnapshot::analyze(&t, &["status", "day"], 100, 16).unwrap();
        snap.add_extended(&t, "status", "day", 64).unwrap();
        let preds = [Predicate::eq("status", 2), Predicate::eq("day", 2)];
        let n = t.n_rows() as f64;
        let (s, d) = (t.column("status").unwrap(), t.column("day").unwrap());
        let truth = s.iter().zip(d).filter(|(&a, &b)| a == 2 && b == 2).count() as f64 / n;
        let plain = estimate_selectivity(&snap, &preds).unwrap();
        let ext = estimate_selectivity_extended(&snap, &preds).unwrap();
        assert!((ext - truth).abs() < (plain - truth).abs());
        assert!(snap.report().contains("extended (status, day)"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn selectivity_bounded_and_monotone_in_width(
                values in proptest::collection::vec(0i64..50, 1..400),
                res in 1usize..12,
                mcv in 0usize..6,
                lo in -5i64..55,
                w1 in 0i64..30,
                extra in 0i64..30,
            ) {
                let t = ColumnTable::new("p", vec![("x".into(), values)]).unwrap();
                let st = build_stats(&t, "x", res, mcv).unwrap();
                prop_assert_eq!(st.histogram.total(), st.built_at_rows);
                prop_assert!(st.histogram.buckets.len() <= res);
                prop_assert!(st.histogram.buckets.windows(2).all(|w| w[0].hi < w[1].lo));
                let a = st.selectivity(&CmpOp::Between(lo, lo + w1));
                let b = st.selectivity(&CmpOp::Between(lo, lo + w1 + extra));
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(b + 1e-12 >= a);
            }
        }
    }
}
