//! Synthetic skewed/correlated tables and parameterized query workloads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{CmpOp, JoinSpec, Predicate, Query};
use crate::table::ColumnTable;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Normalized Zipf probabilities for ranks `1..=n_distinct`.
pub fn zipf_pmf(n_distinct: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n_distinct).map(|k| (k as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Inverse-CDF sampler over a precomputed cumulative table.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n_distinct: usize, s: f64) -> Result<Self> {
        if n_distinct == 0 {
            return Err(Error::InvalidParameter("n_distinct must be >= 1".into()));
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("zipf exponent must be > 0, got {s}")));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = zipf_pmf(n_distinct, s)
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(ZipfSampler { cdf })
    }

    /// Returns a zero-based rank.
    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// Zipf-distributed values in `[0, n_distinct)`; value `k` has rank `k + 1`.
pub fn gen_zipf_column(n_rows: usize, n_distinct: usize, s: f64, seed: u64) -> Result<Vec<i64>> {
    if n_rows == 0 {
        return Err(Error::InvalidParameter("n_rows must be >= 1".into()));
    }
    let sampler = ZipfSampler::new(n_distinct, s)?;
    let mut rng = rng(seed);
    Ok((0..n_rows).map(|_| sampler.sample(&mut rng) as i64).collect())
}

/// With probability `rho` each output is `base mod n_distinct`, otherwise a uniform draw.
pub fn gen_correlated_column(
    base: &[i64],
    rho: f64,
    n_distinct: usize,
    seed: u64,
) -> Result<Vec<i64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("correlation must be in [0,1], got {rho}")));
    }
    if n_distinct == 0 {
        return Err(Error::InvalidParameter("n_distinct must be >= 1".into()));
    }
    let nd = n_distinct as i64;
    let mut rng = rng(seed);
    Ok(base
        .iter()
        .map(|&b| {
            let aligned = rng.gen_bool(rho);
            let noise = rng.gen_range(0..nd);
            if aligned {
                b.rem_euclid(nd)
            } else {
                noise
            }
        })
        .collect())
}

pub fn gen_uniform_column(n_rows: usize, lo: i64, hi: i64, seed: u64) -> Result<Vec<i64>> {
    if lo > hi {
        return Err(Error::InvalidParameter(format!("empty uniform range [{lo}, {hi}]")));
    }
    let mut rng = rng(seed);
    Ok((0..n_rows).map(|_| rng.gen_range(lo..=hi)).collect())
}

/// Distribution descriptor for one generated column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ColumnDist {
    Zipf { n_distinct: usize, s: f64 },
    Uniform { lo: i64, hi: i64 },
    /// Correlated with an earlier column of the same table.
    Correlated { base: String, rho: f64, n_distinct: usize },
    /// Row number, i.e. a dense primary key.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: ColumnDist,
    #[serde(default)]
    pub indexed: bool,
}

impl ColumnSpec {
    pub fn new(name: &str, dist: ColumnDist, indexed: bool) -> Self {
        ColumnSpec {
            name: name.into(),
            dist,
            indexed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub n_rows: usize,
    pub seed: u64,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    /// The default skew + correlation schema: `status` Zipf(8, 1.2), `day` correlated
    /// with `status` over 365 values, both indexed, plus eight uniform payload columns.
    pub fn orders(n_rows: usize, rho: f64, seed: u64) -> Self {
        let mut columns = vec![
            ColumnSpec::new("status", ColumnDist::Zipf { n_distinct: 8, s: 1.2 }, true),
            ColumnSpec::new(
                "day",
                ColumnDist::Correlated {
                    base: "status".into(),
                    rho,
                    n_distinct: 365,
                },
                true,
            ),
        ];
        for i in 0..8 {
            columns.push(ColumnSpec::new(
                &format!("p{i}"),
                ColumnDist::Uniform { lo: 0, hi: 9_999 },
                false,
            ));
        }
        TableSpec {
            name: "orders".into(),
            n_rows,
            seed,
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Generates column values for `spec`, resolving correlated bases against `existing`
/// first and then against columns generated earlier in the same call.
pub(crate) fn gen_columns(
    spec: &TableSpec,
    n_rows: usize,
    seed: u64,
    existing: &BTreeMap<String, Vec<i64>>,
) -> Result<BTreeMap<String, Vec<i64>>> {
    let mut out: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for (i, c) in spec.columns.iter().enumerate() {
        let col_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(i as u64 + 1);
        let values = match &c.dist {
            ColumnDist::Zipf { n_distinct, s } => gen_zipf_column(n_rows, *n_distinct, *s, col_seed)?,
            ColumnDist::Uniform { lo, hi } => gen_uniform_column(n_rows, *lo, *hi, col_seed)?,
            ColumnDist::Correlated { base, rho, n_distinct } => {
                let base_vals = out.get(base).or_else(|| existing.get(base)).ok_or_else(|| {
                    Error::UnknownColumn {
                        table: spec.name.clone(),
                        column: base.clone(),
                    }
                })?;
                gen_correlated_column(base_vals, *rho, *n_distinct, col_seed)?
            }
            ColumnDist::Sequence => (0..n_rows as i64).collect(),
        };
        out.insert(c.name.clone(), values);
    }
    Ok(out)
}

pub fn build_table(spec: &TableSpec) -> Result<ColumnTable> {
    if spec.n_rows == 0 {
        return Err(Error::InvalidParameter("n_rows must be >= 1".into()));
    }
    let mut generated = gen_columns(spec, spec.n_rows, spec.seed, &BTreeMap::new())?;
    let columns = spec
        .columns
        .iter()
        .map(|c| (c.name.clone(), generated.remove(&c.name).unwrap()))
        .collect();
    let indexed: Vec<&str> = spec
        .columns
        .iter()
        .filter(|c| c.indexed)
        .map(|c| c.name.as_str())
        .collect();
    ColumnTable::new(spec.name.clone(), columns)?.with_indexes(&indexed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkloadKind {
    #[serde(rename = "Q_SC")]
    QSc,
    BindSweep,
    Join,
}

/// How a bind value is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "draw", rename_all = "snake_case")]
pub enum ValueDraw {
    Uniform { lo: i64, hi: i64 },
    Choice { values: Vec<i64> },
    /// Weighted categorical draw; `weights[i]` is the weight of `values[i]`.
    Weighted { values: Vec<i64>, weights: Vec<f64> },
}

impl ValueDraw {
    fn validate(&self) -> Result<()> {
        match self {
            ValueDraw::Uniform { lo, hi } if lo > hi => Err(Error::InvalidParameter(format!(
                "empty draw range [{lo}, {hi}]"
            ))),
            ValueDraw::Choice { values } if values.is_empty() => {
                Err(Error::InvalidParameter("empty choice list".into()))
            }
            ValueDraw::Weighted { values, weights }
                if values.is_empty()
                    || values.len() != weights.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0 =>
            {
                Err(Error::InvalidParameter("invalid weighted draw".into()))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> i64 {
        match self {
            ValueDraw::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
            ValueDraw::Choice { values } => values[rng.gen_range(0..values.len())],
            ValueDraw::Weighted { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().unwrap()
            }
        }
    }
}

/// One conjunct of a query template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum PredicateTemplate {
    Equality { column: String, value: ValueDraw },
    /// `column between start and start + width - 1`.
    Range { column: String, start: ValueDraw, width: i64 },
    /// Range predicate whose center walks `lo..=hi` in `steps` evenly spaced positions,
    /// one position per query, wrapping around.
    Sweep { column: String, lo: i64, hi: i64, steps: usize, width: i64 },
}

impl PredicateTemplate {
    pub fn column(&self) -> &str {
        match self {
            PredicateTemplate::Equality { column, .. }
            | PredicateTemplate::Range { column, .. }
            | PredicateTemplate::Sweep { column, .. } => column,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PredicateTemplate::Equality { value, .. } => value.validate(),
            PredicateTemplate::Range { start, width, .. } => {
                if *width < 1 {
                    return Err(Error::InvalidParameter("range width must be >= 1".into()));
                }
                start.validate()
            }
            PredicateTemplate::Sweep { lo, hi, steps, width, .. } => {
                if *steps == 0 || lo > hi || *width < 1 {
                    return Err(Error::InvalidParameter("invalid sweep template".into()));
                }
                Ok(())
            }
        }
    }

    fn instantiate<R: Rng>(&self, rng: &mut R, seq: usize) -> Predicate {
        match self {
            PredicateTemplate::Equality { column, value } => Predicate::eq(column, value.draw(rng)),
            PredicateTemplate::Range { column, start, width } => {
                let lo = start.draw(rng);
                Predicate::between(column, lo, lo + width - 1)
            }
            PredicateTemplate::Sweep { column, lo, hi, steps, width } => {
                let pos = (seq % steps) as i64;
                let center = if *steps == 1 {
                    *lo
                } else {
                    lo + (hi - lo) * pos / (*steps as i64 - 1)
                };
                let lo = center - (width - 1) / 2;
                Predicate::new(column, CmpOp::Between(lo, lo + width - 1))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinTemplate {
    pub right_table: String,
    pub left_key: String,
    pub right_key: String,
    #[serde(default)]
    pub right_predicates: Vec<PredicateTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub table: String,
    pub n_queries: usize,
    pub seed: u64,
    pub predicates: Vec<PredicateTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinTemplate>,
}

impl WorkloadSpec {
    pub fn k(&self) -> usize {
        self.predicates.len()
    }

    pub fn validate(&self, left: &ColumnTable, right: Option<&ColumnTable>) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::InvalidParameter("n_queries must be >= 1".into()));
        }
        if self.predicates.is_empty() {
            return Err(Error::InvalidParameter("workload needs at least one predicate".into()));
        }
        if left.name() != self.table {
            return Err(Error::UnknownTable(self.table.clone()));
        }
        for t in &self.predicates {
            t.validate()?;
            left.column(t.column())?;
        }
        match (self.kind, &self.join) {
            (WorkloadKind::Join, Some(j)) => {
                let right = right.ok_or_else(|| Error::UnknownTable(j.right_table.clone()))?;
                if right.name() != j.right_table {
                    return Err(Error::UnknownTable(j.right_table.clone()));
                }
                left.column(&j.left_key)?;
                right.column(&j.right_key)?;
                for t in &j.right_predicates {
                    t.validate()?;
                    right.column(t.column())?;
                }
                Ok(())
            }
            (WorkloadKind::Join, None) => Err(Error::InvalidParameter(
                "JOIN workload requires a join template".into(),
            )),
            (_, Some(_)) => Err(Error::InvalidParameter(
                "join template only valid for JOIN workloads".into(),
            )),
            (_, None) => Ok(()),
        }
    }
}

pub fn gen_workload(
    spec: &WorkloadSpec,
    left: &ColumnTable,
    right: Option<&ColumnTable>,
) -> Result<Vec<Query>> {
    spec.validate(left, right)?;
    let mut rng = rng(spec.seed);
    Ok((0..spec.n_queries)
        .map(|i| {
            let predicates = spec
                .predicates
                .iter()
                .map(|t| t.instantiate(&mut rng, i))
                .collect();
            let join = spec.join.as_ref().map(|j| JoinSpec {
                right_table: j.right_table.clone(),
                left_key: j.left_key.clone(),
                right_key: j.right_key.clone(),
                right_predicates: j
                    .right_predicates
                    .iter()
                    .map(|t| t.instantiate(&mut rng, i))
                    .collect(),
            });
            Query {
                id: i as u64,
                table: spec.table.clone(),
                predicates,
                join,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq(values: &[i64], n_distinct: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_distinct];
        for &v in values {
            counts[v as usize] += 1;
        }
        counts.iter().map(|&c| c as f64 / values.len() as f64).collect()
    }

    /// Joint/marginal exhaustive-count PCS of (a == va, b == vb).
    fn brute_pcs(a: &[i64], va: i64, b: &[i64], vb: i64) -> f64 {
        let n = a.len() as f64;
        let ca = a.iter().filter(|&&x| x == va).count() as f64;
        let cb = b.iter().filter(|&&x| x == vb).count() as f64;
        let j = a.iter().zip(b).filter(|(&x, &y)| x == va && y == vb).count() as f64;
        (j / n) / ((ca / n) * (cb / n))
    }

    #[test]
    fn zipf_rank1_frequency_matches_normalizer() {
        // 1 / sum_{j=1..8} j^-1.2
        let z: f64 = (1..=8).map(|j| (j as f64).powf(-1.2)).sum();
        let expected = 1.0 / z;
        let v = gen_zipf_column(1_000_000, 8, 1.2, 7).unwrap();
        let f = freq(&v, 8);
        assert!((f[0] - expected).abs() < 0.01, "{} vs {expected}", f[0]);
    }

    #[test]
    fn zipf_l1_distance_small() {
        let v = gen_zipf_column(100_000, 8, 1.2, 3).unwrap();
        let f = freq(&v, 8);
        let l1: f64 = f.iter().zip(zipf_pmf(8, 1.2)).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 0.02, "L1 = {l1}");
    }

    #[test]
    fn zipf_single_value_and_determinism() {
        assert!(gen_zipf_column(1000, 1, 3.0, 1).unwrap().iter().all(|&v| v == 0));
        assert_eq!(
            gen_zipf_column(5000, 50, 1.2, 9).unwrap(),
            gen_zipf_column(5000, 50, 1.2, 9).unwrap()
        );
    }

    #[test]
    fn zipf_rejects_bad_params() {
        assert!(gen_zipf_column(0, 8, 1.2, 0).is_err());
        assert!(gen_zipf_column(10, 0, 1.2, 0).is_err());
        assert!(gen_zipf_column(10, 8, 0.0, 0).is_err());
        assert!(gen_zipf_column(10, 8, -1.0, 0).is_err());
    }

    #[test]
    fn correlated_extremes() {
        let base = gen_zipf_column(100_000, 8, 1.2, 1).unwrap();
        assert_eq!(gen_correlated_column(&base, 1.0, 8, 5).unwrap(), base);
        assert!(gen_correlated_column(&base, 1.5, 8, 5).is_err());
        assert!(gen_correlated_column(&base, -0.1, 8, 5).is_err());

        let indep = gen_correlated_column(&base, 0.0, 8, 5).unwrap();
        for (va, vb) in [(0, 0), (0, 3), (1, 1), (2, 5)] {
            let pcs = brute_pcs(&base, va, &indep, vb);
            assert!((pcs - 1.0).abs() <= 0.1, "pcs({va},{vb}) = {pcs}");
        }
    }

    #[test]
    fn correlated_rho_08_breaches_pcs_high() {
        let base = gen_zipf_column(100_000, 8, 1.2, 1).unwrap();
        let out = gen_correlated_column(&base, 0.8, 365, 5).unwrap();
        for va in 0..8 {
            let pcs = brute_pcs(&base, va, &out, va);
            assert!(pcs > 1.6, "aligned pair {va}: {pcs}");
        }
    }

    #[test]
    fn correlated_pcs_monotone_in_rho() {
        let base = gen_zipf_column(100_000, 8, 1.2, 1).unwrap();
        let mut prev = 0.0;
        for rho in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let out = gen_correlated_column(&base, rho, 365, 11).unwrap();
            let pcs = brute_pcs(&base, 0, &out, 0);
            assert!(pcs >= prev, "rho {rho}: {pcs} < {prev}");
            prev = pcs;
        }
    }

    fn qsc_spec(n: usize) -> WorkloadSpec {
        WorkloadSpec {
            kind: WorkloadKind::QSc,
            table: "orders".into(),
            n_queries: n,
            seed: 42,
            predicates: vec![
                PredicateTemplate::Equality {
                    column: "status".into(),
                    value: ValueDraw::Uniform { lo: 0, hi: 7 },
                },
                PredicateTemplate::Range {
                    column: "day".into(),
                    start: ValueDraw::Uniform { lo: 0, hi: 358 },
                    width: 7,
                },
            ],
            join: None,
        }
    }

    #[test]
    fn qsc_workload_shape() {
        let t = build_table(&TableSpec::orders(10_000, 0.8, 1)).unwrap();
        let qs = gen_workload(&qsc_spec(600), &t, None).unwrap();
        assert_eq!(qs.len(), 600);
        assert!(qs.iter().all(|q| q.predicates.len() == 2 && q.validate(&t, None).is_ok()));
        assert_eq!(qs, gen_workload(&qsc_spec(600), &t, None).unwrap());
        assert_eq!(gen_workload(&qsc_spec(1), &t, None).unwrap().len(), 1);
    }

    #[test]
    fn workload_schema_mismatch() {
        let t = build_table(&TableSpec::orders(100, 0.8, 1)).unwrap();
        let mut spec = qsc_spec(10);
        spec.predicates[0] = PredicateTemplate::Equality {
            column: "nope".into(),
            value: ValueDraw::Choice { values: vec![1] },
        };
        assert!(matches!(
            gen_workload(&spec, &t, None),
            Err(Error::UnknownColumn { .. })
        ));
        spec.n_queries = 0;
        assert!(gen_workload(&spec, &t, None).is_err());
    }

    #[test]
    fn sweep_walks_centers() {
        let t = build_table(&TableSpec::orders(100, 0.8, 1)).unwrap();
        let spec = WorkloadSpec {
            kind: WorkloadKind::BindSweep,
            table: "orders".into(),
            n_queries: 40,
            seed: 1,
            predicates: vec![
                PredicateTemplate::Equality {
                    column: "status".into(),
                    value: ValueDraw::Choice { values: vec![1] },
                },
                PredicateTemplate::Sweep {
                    column: "day".into(),
                    lo: 3,
                    hi: 361,
                    steps: 20,
                    width: 7,
                },
            ],
            join: None,
        };
        let qs = gen_workload(&spec, &t, None).unwrap();
        assert_eq!(qs[0].predicates[1].op, CmpOp::Between(0, 6));
        assert_eq!(qs[19].predicates[1].op, CmpOp::Between(358, 364));
        assert_eq!(qs[20].predicates[1], qs[0].predicates[1]);
    }

    #[test]
    fn join_workload_carries_valid_keys() {
        let fact = build_table(&TableSpec {
            name: "fact".into(),
            n_rows: 1000,
            seed: 1,
            columns: vec![
                ColumnSpec::new("fk", ColumnDist::Zipf { n_distinct: 100, s: 1.2 }, true),
                ColumnSpec::new("status", ColumnDist::Zipf { n_distinct: 8, s: 1.2 }, true),
            ],
        })
        .unwrap();
        let dim = build_table(&TableSpec {
            name: "dim".into(),
            n_rows: 100,
            seed: 2,
            columns: vec![
                ColumnSpec::new("id", ColumnDist::Sequence, true),
                ColumnSpec::new("segment", ColumnDist::Uniform { lo: 0, hi: 9 }, true),
            ],
        })
        .unwrap();
        let spec = WorkloadSpec {
            kind: WorkloadKind::Join,
            table: "fact".into(),
            n_queries: 20,
            seed: 3,
            predicates: vec![PredicateTemplate::Equality {
                column: "status".into(),
                value: ValueDraw::Uniform { lo: 0, hi: 7 },
            }],
            join: Some(JoinTemplate {
                right_table: "dim".into(),
                left_key: "fk".into(),
                right_key: "id".into(),
                right_predicates: vec![PredicateTemplate::Equality {
                    column: "segment".into(),
                    value: ValueDraw::Uniform { lo: 0, hi: 9 },
                }],
            }),
        };
        let qs = gen_workload(&spec, &fact, Some(&dim)).unwrap();
        assert!(qs
            .iter()
            .all(|q| q.join.is_some() && q.validate(&fact, Some(&dim)).is_ok()));
    }
}
