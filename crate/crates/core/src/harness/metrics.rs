//! Latency percentiles and per-method summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{plan_coverage, plan_flip_rate, PlanRecord};
use crate::probe_cache::CacheStats;

/// Nearest-rank percentile: the value at 1-based rank `⌈q·n⌉` of the ascending sort.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty sequence".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("quantile must be in (0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 0.5)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl LatencySummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        Ok(LatencySummary {
            p50: percentile(values, 0.50)?,
            p95: percentile(values, 0.95)?,
            p99: percentile(values, 0.99)?,
        })
    }
}

/// Metrics of one method over one query stream, or medians across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub n_queries: usize,
    pub gated_rate: f64,
    pub probe_rate: f64,
    pub plan_flip: f64,
    pub coverage: f64,
    pub exec: LatencySummary,
    pub total: LatencySummary,
    pub probe_p95: f64,
    pub probe_p99: f64,
    pub gate_p99: f64,
    /// Share of queries whose chosen plan equals the exact-cardinality plan.
    pub oracle_rate: Option<f64>,
    pub est_cv: Option<f64>,
    pub cache: Option<CacheStats>,
    pub errors: usize,
}

/// Summarizes one stream. Latency percentiles skip the first `warmup` share of
/// records; rates and flips use all of them.
pub fn summarize(
    method: &str,
    records: &[PlanRecord],
    warmup: f64,
    oracle_hashes: Option<&[u64]>,
    cache: Option<CacheStats>,
) -> Result<MethodMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("no records for {method}")));
    }
    let n = records.len();
    let skip = ((n as f64 * warmup).floor() as usize).min(n - 1);
    let timed = &records[skip..];
    let col = |f: fn(&PlanRecord) -> f64| -> Vec<f64> { timed.iter().map(f).collect() };
    let probe_ms = col(|r| r.probe_ms);
    let oracle_rate = oracle_hashes.map(|o| {
        let hits = records
            .iter()
            .zip(o)
            .filter(|(r, h)| r.plan_hash == Some(**h))
            .count();
        hits as f64 / n as f64
    });
    Ok(MethodMetrics {
        method: method.to_string(),
        n_queries: n,
        gated_rate: records.iter().filter(|r| r.gated).count() as f64 / n as f64,
        probe_rate: records.iter().filter(|r| r.probed).count() as f64 / n as f64,
        plan_flip: if n >= 2 { plan_flip_rate(records)? } else { 0.0 },
        coverage: plan_coverage(records)?,
        exec: LatencySummary::of(&col(|r| r.exec_ms))?,
        total: LatencySummary::of(&col(|r| r.total_ms))?,
        probe_p95: percentile(&probe_ms, 0.95)?,
        probe_p99: percentile(&probe_ms, 0.99)?,
        gate_p99: percentile(&col(|r| r.gate_ms), 0.99)?,
        oracle_rate,
        est_cv: None,
        cache,
        errors: records.iter().filter(|r| r.error.is_some()).count(),
    })
}

/// Field-wise median across repetitions of the same method.
pub fn median_across(reps: &[MethodMetrics]) -> Result<MethodMetrics> {
    let first = reps
        .first()
        .ok_or_else(|| Error::EmptyInput("no repetitions".into()))?;
    let med = |f: &dyn Fn(&MethodMetrics) -> f64| -> Result<f64> {
        median(&reps.iter().map(f).collect::<Vec<_>>())
    };
    let lat = |f: &dyn Fn(&MethodMetrics) -> LatencySummary| -> Result<LatencySummary> {
        Ok(LatencySummary {
            p50: med(&|m| f(m).p50)?,
            p95: med(&|m| f(m).p95)?,
            p99: med(&|m| f(m).p99)?,
        })
    };
    let opt = |f: &dyn Fn(&MethodMetrics) -> Option<f64>| -> Result<Option<f64>> {
        let v: Vec<f64> = reps.iter().filter_map(f).collect();
        if v.is_empty() {
            Ok(None)
        } else {
            median(&v).map(Some)
        }
    };
    Ok(MethodMetrics {
        method: first.method.clone(),
        n_queries: first.n_queries,
        gated_rate: med(&|m| m.gated_rate)?,
        probe_rate: med(&|m| m.probe_rate)?,
        plan_flip: med(&|m| m.plan_flip)?,
        coverage: med(&|m| m.coverage)?,
        exec: lat(&|m| m.exec)?,
        total: lat(&|m| m.total)?,
        probe_p95: med(&|m| m.probe_p95)?,
        probe_p99: med(&|m| m.probe_p99)?,
        gate_p99: med(&|m| m.gate_p99)?,
        oracle_rate: opt(&|m| m.oracle_rate)?,
        est_cv: opt(&|m| m.est_cv)?,
        cache: first.cache,
        errors: reps.iter().map(|m| m.errors).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&[4.2], 0.3).unwrap(), 4.2);
        assert_eq!(percentile(&[5.0, 1.0, 3.0], 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 100.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&v, 0.0).is_err());
    }

    #[test]
    fn latency_summary_is_ordered() {
        let v: Vec<f64> = (0..257).map(|i| ((i * 7919) % 257) as f64).collect();
        let s = LatencySummary::of(&v).unwrap();
        assert!(s.p50 <= s.p95 && s.p95 <= s.p99);
    }
}
