//! Cost-constrained selectivity probes over a row sample.
//!
//! A probe draws a sample, copies the referenced key columns into a staging
//! buffer, evaluates M candidate predicate sets and reduces the matches to
//! counts. Two backends produce bit-identical counts:
//!
//! * [`Backend::Serial`] evaluates every set row by row, the way classic
//!   dynamic sampling does. Its cost grows with `K·M·N`.
//! * [`Backend::Parallel`] evaluates each distinct predicate once into a
//!   64-bit word bitmap, ANDs bitmaps per set and popcounts, with sample
//!   partitions processed by worker threads. Staged copies in and out of the
//!   worker buffers stand in for host/device transfers.

pub mod bitmask;
pub mod sample;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::Predicate;
use crate::table::ColumnTable;

pub use bitmask::{evaluate_bitmasks, Bitmap, BitmaskBlock, BitmaskEval, KeyBuffer};
pub use sample::{draw_sample, SampleMode};

/// Upper bound on predicates per candidate set.
pub const K_MAX: usize = 64;

/// Rows per worker partition; a multiple of the bitmap word size.
const PARTITION_ROWS: usize = 64 * 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backend {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub table: String,
    pub n_sample: usize,
    pub mode: SampleMode,
    pub sets: Vec<Vec<Predicate>>,
    pub key_only: bool,
    pub seed: u64,
}

impl ProbeRequest {
    pub fn new(table: &ColumnTable, n_sample: usize, sets: Vec<Vec<Predicate>>, seed: u64) -> Self {
        ProbeRequest {
            table: table.name().to_string(),
            n_sample,
            mode: SampleMode::UniformRow,
            sets,
            key_only: true,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.sets.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn m(&self) -> usize {
        self.sets.len()
    }

    pub fn validate(&self, table: &ColumnTable) -> Result<()> {
        if table.name() != self.table {
            return Err(Error::UnknownTable(self.table.clone()));
        }
        if self.n_sample == 0 {
            return Err(Error::InvalidParameter("n_sample must be >= 1".into()));
        }
        if self.n_sample > table.n_rows() {
            return Err(Error::SampleTooLarge {
                requested: self.n_sample,
                rows: table.n_rows(),
            });
        }
        if self.sets.is_empty() {
            return Err(Error::InvalidParameter("probe needs at least one candidate set".into()));
        }
        for set in &self.sets {
            if set.is_empty() || set.len() > K_MAX {
                return Err(Error::InvalidParameter(format!(
                    "candidate set size must be in 1..={K_MAX}"
                )));
            }
            for p in set {
                table.column(&p.column)?;
            }
        }
        Ok(())
    }

    /// Columns referenced by any predicate, in first-seen order.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = Vec::new();
        for p in self.sets.iter().flatten() {
            if !cols.contains(&p.column.as_str()) {
                cols.push(&p.column);
            }
        }
        cols
    }
}

/// Stage timings in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimers {
    pub sample_ms: f64,
    pub xfer_in_ms: f64,
    pub eval_ms: f64,
    pub xfer_out_ms: f64,
    pub reduce_ms: f64,
    pub total_ms: f64,
}

impl StageTimers {
    pub fn stage_sum(&self) -> f64 {
        self.sample_ms + self.xfer_in_ms + self.eval_ms + self.xfer_out_ms + self.reduce_ms
    }

    pub fn transfer_ms(&self) -> f64 {
        self.xfer_in_ms + self.xfer_out_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub count: u64,
    pub s_probe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub backend: Backend,
    pub n_sample: usize,
    pub sets: Vec<SetResult>,
    /// Match count for every distinct predicate (the PCS marginals).
    pub predicates: Vec<(Predicate, u64)>,
    pub timers: StageTimers,
    pub cells_transferred: usize,
}

impl ProbeResult {
    pub fn counts(&self) -> Vec<u64> {
        self.sets.iter().map(|s| s.count).collect()
    }

    pub fn predicate_selectivity(&self, p: &Predicate) -> Option<f64> {
        self.predicates
            .iter()
            .find(|(q, _)| q == p)
            .map(|(_, c)| *c as f64 / self.n_sample as f64)
    }

    /// `P(set) / Π P(member)` for a set of two or more predicates; `None` when a
    /// marginal is zero.
    pub fn pcs(&self, set_idx: usize, set: &[Predicate]) -> Option<f64> {
        if set.len() < 2 {
            return None;
        }
        let mut denom = 1.0;
        for p in set {
            let m = self.predicate_selectivity(p)?;
            if m == 0.0 {
                return None;
            }
            denom *= m;
        }
        Some(self.sets[set_idx].s_probe / denom)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Copies the sampled rows of the referenced (or all) columns.
pub fn extract_keys(table: &ColumnTable, columns: &[&str], rows: &[u32]) -> Result<KeyBuffer> {
    let mut out = Vec::with_capacity(columns.len());
    for &c in columns {
        let src = table.column(c)?;
        out.push((c.to_string(), rows.iter().map(|&r| src[r as usize]).collect()));
    }
    Ok(KeyBuffer {
        columns: out,
        n_rows: rows.len(),
    })
}

fn staged_columns<'a>(table: &'a ColumnTable, req: &'a ProbeRequest) -> Vec<&'a str> {
    if req.key_only {
        req.referenced_columns()
    } else {
        table.column_names().collect()
    }
}

pub fn probe(table: &ColumnTable, req: &ProbeRequest, backend: Backend) -> Result<ProbeResult> {
    req.validate(table)?;
    let start = Instant::now();
    let mut timers = StageTimers::default();

    let t = Instant::now();
    let rows = draw_sample(table.n_rows(), req.n_sample, req.mode, req.seed)?;
    timers.sample_ms = ms_since(t);

    let columns = staged_columns(table, req);
    let (set_counts, pred_counts, unique, cells) = match backend {
        Backend::Serial => run_serial(table, req, &columns, &rows, &mut timers)?,
        Backend::Parallel => run_parallel(table, req, &columns, &rows, &mut timers)?,
    };
    timers.total_ms = ms_since(start);

    let n = req.n_sample as f64;
    Ok(ProbeResult {
        backend,
        n_sample: req.n_sample,
        sets: set_counts
            .into_iter()
            .map(|count| SetResult {
                count,
                s_probe: count as f64 / n,
            })
            .collect(),
        predicates: unique.into_iter().zip(pred_counts).collect(),
        timers,
        cells_transferred: cells,
    })
}

type StageOutput = (Vec<u64>, Vec<u64>, Vec<Predicate>, usize);

fn run_serial(
    table: &ColumnTable,
    req: &ProbeRequest,
    columns: &[&str],
    rows: &[u32],
    timers: &mut StageTimers,
) -> Result<StageOutput> {
    let t = Instant::now();
    let keys = extract_keys(table, columns, rows)?;
    timers.xfer_in_ms = ms_since(t);

    let t = Instant::now();
    let (unique, _) = bitmask::dedup_predicates(&req.sets);
    let resolve = |set: &[Predicate]| -> Result<Vec<(&[i64], crate::query::CmpOp)>> {
        set.iter().map(|p| Ok((keys.column(&p.column)?, p.op))).collect()
    };
    let mut set_counts = Vec::with_capacity(req.sets.len());
    for set in &req.sets {
        let preds = resolve(set)?;
        let mut count = 0u64;
        for r in 0..keys.n_rows {
            if preds.iter().all(|(col, op)| op.matches(col[r])) {
                count += 1;
            }
        }
        set_counts.push(count);
    }
    let mut pred_counts = Vec::with_capacity(unique.len());
    for p in &unique {
        let col = keys.column(&p.column)?;
        pred_counts.push(col.iter().filter(|&&v| p.op.matches(v)).count() as u64);
    }
    timers.eval_ms = ms_since(t);

    let t = Instant::now();
    let out: Vec<u64> = set_counts.iter().chain(&pred_counts).copied().collect();
    timers.xfer_out_ms = ms_since(t);

    let t = Instant::now();
    let (s, p) = out.split_at(set_counts.len());
    let (s, p) = (s.to_vec(), p.to_vec());
    timers.reduce_ms = ms_since(t);
    Ok((s, p, unique, keys.cells()))
}

fn run_parallel(
    table: &ColumnTable,
    req: &ProbeRequest,
    columns: &[&str],
    rows: &[u32],
    timers: &mut StageTimers,
) -> Result<StageOutput> {
    let t = Instant::now();
    let staged: Vec<KeyBuffer> = rows
        .par_chunks(PARTITION_ROWS)
        .map(|chunk| extract_keys(table, columns, chunk))
        .collect::<Result<_>>()?;
    timers.xfer_in_ms = ms_since(t);
    let cells = staged.iter().map(KeyBuffer::cells).sum();

    let t = Instant::now();
    let evals: Vec<BitmaskEval> = staged
        .par_iter()
        .map(|keys| evaluate_bitmasks(keys, &req.sets))
        .collect::<Result<_>>()?;
    timers.eval_ms = ms_since(t);

    // gather partition bitmaps into one contiguous host-side block
    let t = Instant::now();
    let n_sets = req.sets.len();
    let n_preds = evals.first().map(|e| e.block.predicates.len()).unwrap_or(0);
    let mut host: Vec<Vec<u64>> = vec![Vec::with_capacity(rows.len().div_ceil(64)); n_sets + n_preds];
    for e in &evals {
        for (dst, src) in host.iter_mut().zip(e.conjunctions.iter().chain(&e.block.bitmaps)) {
            dst.extend_from_slice(&src.words);
        }
    }
    timers.xfer_out_ms = ms_since(t);

    let t = Instant::now();
    let counts: Vec<u64> = host
        .par_iter()
        .map(|words| words.iter().map(|w| w.count_ones() as u64).sum())
        .collect();
    timers.reduce_ms = ms_since(t);

    let (unique, _) = bitmask::dedup_predicates(&req.sets);
    let (s, p) = counts.split_at(n_sets);
    Ok((s.to_vec(), p.to_vec(), unique, cells))
}

/// Coefficient of variation across repetitions; `None` when the mean is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub repetitions: usize,
    pub n_sample: usize,
    pub set_cv: Vec<Option<f64>>,
    pub set_mean: Vec<f64>,
    /// CV of PCS for every set of two or more predicates.
    pub pcs_cv: Vec<Option<f64>>,
}

pub fn coefficient_of_variation(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 || xs.len() < 2 {
        return None;
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt() / mean.abs())
}

/// Repeats the probe with seeds `req.seed + r` for `r in 0..repetitions`.
pub fn estimate_cv(
    table: &ColumnTable,
    req: &ProbeRequest,
    repetitions: usize,
    backend: Backend,
) -> Result<CvReport> {
    if repetitions < 2 {
        return Err(Error::InvalidParameter("Est.CV needs at least 2 repetitions".into()));
    }
    let m = req.sets.len();
    let mut sels = vec![Vec::with_capacity(repetitions); m];
    let mut pcs = vec![Vec::with_capacity(repetitions); m];
    for r in 0..repetitions {
        let mut rq = req.clone();
        rq.seed = req.seed.wrapping_add(r as u64);
        let res = probe(table, &rq, backend)?;
        for (i, set) in req.sets.iter().enumerate() {
            sels[i].push(res.sets[i].s_probe);
            if set.len() >= 2 {
                // undefined PCS draws (zero marginal) count as 0
                pcs[i].push(res.pcs(i, set).unwrap_or(0.0));
            }
        }
    }
    Ok(CvReport {
        repetitions,
        n_sample: req.n_sample,
        set_mean: sels.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect(),
        set_cv: sels.iter().map(|v| coefficient_of_variation(v)).collect(),
        pcs_cv: pcs
            .iter()
            .filter(|v| !v.is_empty())
            .map(|v| coefficient_of_variation(v))
            .collect(),
    })
}

/// One JSON-lines record per probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub table: String,
    pub n_sample: usize,
    pub k: usize,
    pub m: usize,
    pub key_only: bool,
    pub mode: SampleMode,
    pub seed: u64,
    pub backend: Backend,
    pub counts: Vec<u64>,
    pub timers: StageTimers,
    pub cells_transferred: usize,
}

impl ProbeTrace {
    pub fn new(req: &ProbeRequest, res: &ProbeResult) -> Self {
        ProbeTrace {
            table: req.table.clone(),
            n_sample: req.n_sample,
            k: req.k(),
            m: req.m(),
            key_only: req.key_only,
            mode: req.mode,
            seed: req.seed,
            backend: res.backend,
            counts: res.counts(),
            timers: res.timers,
            cells_transferred: res.cells_transferred,
        }
    }
}
