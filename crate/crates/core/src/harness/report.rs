//! CSV / JSON / JSON-lines output and re-summarizing of raw logs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::HarnessConfig;
use super::experiments::{ExperimentId, ExperimentOutput, Method, RunRecord};
use super::metrics::{median_across, summarize, MethodMetrics};

/// Column layout of the baseline comparison table.
pub const SUMMARY_COLUMNS: [&str; 6] = ["baseline", "gated_rate", "plan_flip", "exec_p99", "total_p99", "probe_p95"];

/// Everything in an [`ExperimentOutput`] except the raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub id: ExperimentId,
    pub methods: Vec<Method>,
    pub config: HarnessConfig,
    pub summary: Vec<MethodMetrics>,
    pub per_rep: Vec<Vec<MethodMetrics>>,
    pub derived: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub records_jsonl: PathBuf,
    pub points_csv: PathBuf,
}

pub fn report_paths(dir: &Path, id: ExperimentId) -> ReportPaths {
    let stem = id.name().to_ascii_lowercase();
    ReportPaths {
        summary_csv: dir.join(format!("{stem}_summary.csv")),
        summary_json: dir.join(format!("{stem}_summary.json")),
        records_jsonl: dir.join(format!("{stem}_records.jsonl")),
        points_csv: dir.join(format!("{stem}_points.csv")),
    }
}

pub fn write_summary_csv<W: Write>(summary: &[MethodMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for m in summary {
        w.write_record([
            m.method.clone(),
            format!("{:.3}", m.gated_rate),
            format!("{:.3}", m.plan_flip),
            format!("{:.3}", m.exec.p99),
            format!("{:.3}", m.total.p99),
            format!("{:.3}", m.probe_p95),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_report(output: &ExperimentOutput, dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let paths = report_paths(dir, output.id);

    write_summary_csv(&output.summary, File::create(&paths.summary_csv)?)?;

    let doc = SummaryDocument {
        id: output.id,
        methods: output.methods.clone(),
        config: output.config.clone(),
        summary: output.summary.clone(),
        per_rep: output.per_rep.clone(),
        derived: output.derived.clone(),
        notes: output.notes.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&paths.summary_json)?), &doc)?;

    let mut log = BufWriter::new(File::create(&paths.records_jsonl)?);
    for r in &output.records {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;

    let mut w = csv::Writer::from_path(&paths.points_csv)?;
    if !output.points.header.is_empty() {
        w.write_record(&output.points.header)?;
        for row in &output.points.rows {
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(paths)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_summary(path: &Path) -> Result<SummaryDocument> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Recomputes per-method medians from raw records, grouping by method label
/// and repetition in order of first appearance.
pub fn summarize_records(records: &[RunRecord], warmup: f64) -> Result<Vec<MethodMetrics>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, usize), Vec<crate::optimizer::PlanRecord>> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.record.method) {
            order.push(r.record.method.clone());
        }
        groups
            .entry((r.record.method.clone(), r.rep))
            .or_default()
            .push(r.record.clone());
    }
    order
        .iter()
        .map(|m| {
            let reps = groups
                .iter()
                .filter(|((name, _), _)| name == m)
                .map(|(_, recs)| summarize(m, recs, warmup, None, None))
                .collect::<Result<Vec<_>>>()?;
            median_across(&reps)
        })
        .collect()
}
