use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cardgate::harness::calibrate::{calibrate, default_grid};
use cardgate::harness::report::write_summary_csv;
use cardgate::harness::{
    build_scenario, emit_report, read_records, run_experiment, summarize_records, ExperimentId, ExperimentSpec,
    HarnessConfig, Method, Regime, StatsLevel,
};

#[derive(Parser)]
#[command(name = "cardgate", version, about = "Risk-gated cardinality probing experiments")]
struct Cli {
    /// TOML configuration; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress JSON-lines progress events on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tables, statistics and a query stream.
    Gen {
        #[arg(long, value_enum, default_value = "unstable")]
        regime: RegimeArg,
        #[arg(long, value_enum, default_value = "default")]
        stats: StatsArg,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Run one experiment (or ALL) and write its reports.
    Run {
        experiment: String,
        /// Methods to run; repeat or comma-separate. Defaults per experiment.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Size each backend's probe by what it affords within --budget.
        #[arg(long)]
        equal_latency_budget: bool,
        #[arg(long)]
        d_threshold: Option<f64>,
        /// Probe time budget in milliseconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        cache: bool,
        /// Write plan explain text for every query.
        #[arg(long)]
        explain: bool,
    },
    /// Summarize a raw record log.
    Report {
        /// A `*_records.jsonl` file.
        records: PathBuf,
        #[arg(long)]
        warmup: Option<f64>,
        /// Write the summary as JSON here instead of CSV on stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Fit the probe cost model and the cost-unit scale on this machine.
    Calibrate {
        /// Queries per regime used to time plans.
        #[arg(long, default_value_t = 40)]
        plan_queries: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Stable,
    Unstable,
    BindSweep,
    Join,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Stable => Regime::Stable,
            RegimeArg::Unstable => Regime::Unstable,
            RegimeArg::BindSweep => Regime::BindSweep,
            RegimeArg::Join => Regime::Join,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsArg {
    Default,
    High,
    Extended,
}

impl From<StatsArg> for StatsLevel {
    fn from(s: StatsArg) -> Self {
        match s {
            StatsArg::Default => StatsLevel::Default,
            StatsArg::High => StatsLevel::High,
            StatsArg::Extended => StatsLevel::Extended,
        }
    }
}

struct Log {
    quiet: bool,
}

impl Log {
    fn event(&self, value: serde_json::Value) {
        if !self.quiet {
            eprintln!("{value}");
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let log = Log { quiet: cli.quiet };
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => HarnessConfig::default(),
    };
    match cli.command {
        Command::Gen { regime, stats, out } => gen(&cfg, regime.into(), stats.into(), &out, &log),
        Command::Run {
            experiment,
            method,
            seed,
            reps,
            out,
            equal_latency_budget,
            d_threshold,
            budget,
            cache,
            explain,
        } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(d) = d_threshold {
                cfg.gate.d_threshold = d;
            }
            if let Some(b) = budget {
                cfg.budget_ms = b;
            }
            cfg.equal_latency_budget |= equal_latency_budget;
            cfg.cache |= cache;
            cfg.explain |= explain;
            cfg.validate()?;
            let methods = method
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<cardgate::Result<Vec<_>>>()?;
            let ids = if experiment.eq_ignore_ascii_case("all") {
                ExperimentId::ALL.to_vec()
            } else {
                vec![experiment.parse()?]
            };
            for id in ids {
                run(id, &methods, &cfg, &out, &log)?;
            }
            Ok(())
        }
        Command::Report { records, warmup, json } => {
            let recs = read_records(&records)?;
            let summary = summarize_records(&recs, warmup.unwrap_or(cfg.warmup_fraction))?;
            match json {
                Some(p) => serde_json::to_writer_pretty(BufWriter::new(File::create(&p)?), &summary)?,
                None => write_summary_csv(&summary, io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Calibrate { plan_queries, out } => {
            let start = Instant::now();
            log.event(json!({"event": "calibrate_start", "plan_queries": plan_queries}));
            let cal = calibrate(&cfg, &default_grid(), plan_queries)?;
            log.event(json!({"event": "calibrate_done", "secs": start.elapsed().as_secs_f64()}));
            let text = serde_json::to_string_pretty(&cal)?;
            match out {
                Some(p) => fs::write(&p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}

fn gen(cfg: &HarnessConfig, regime: Regime, level: StatsLevel, out: &Path, log: &Log) -> Result<()> {
    fs::create_dir_all(out)?;
    let sc = build_scenario(regime, level, &cfg.scenario)?;
    for name in sc.catalog.table_names() {
        let table = sc.catalog.table(name)?;
        let path = out.join(format!("{name}.csv"));
        table.export_csv(&path)?;
        let stats_path = out.join(format!("{name}_stats.json"));
        serde_json::to_writer_pretty(BufWriter::new(File::create(&stats_path)?), sc.catalog.stats(name)?)?;
        log.event(json!({"event": "table", "name": name, "rows": table.n_rows(), "path": path}));
    }
    let qpath = out.join("queries.jsonl");
    let mut w = BufWriter::new(File::create(&qpath)?);
    for q in &sc.queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("workload.json"))?), &sc.workload)?;
    log.event(json!({"event": "queries", "count": sc.queries.len(), "path": qpath}));
    Ok(())
}

fn run(id: ExperimentId, methods: &[Method], cfg: &HarnessConfig, out: &Path, log: &Log) -> Result<()> {
    let mut spec = ExperimentSpec::new(id, cfg.clone());
    if !methods.is_empty() {
        spec.methods = methods.to_vec();
    }
    log.event(json!({"event": "run_start", "experiment": id.name(), "methods": spec.methods, "reps": cfg.reps, "seed": cfg.seed}));
    let start = Instant::now();
    let output = run_experiment(&spec)?;
    let paths = emit_report(&output, out)?;
    if cfg.explain {
        let path = out.join(format!("{}_explain.txt", id.name().to_ascii_lowercase()));
        let mut w = BufWriter::new(File::create(&path)?);
        for r in &output.records {
            if let Some(e) = &r.record.explain {
                writeln!(w, "# {} rep {} query {}\n{e}", r.record.method, r.rep, r.record.query_id)?;
            }
        }
        w.flush()?;
    }
    log.event(json!({
        "event": "run_done",
        "experiment": id.name(),
        "secs": start.elapsed().as_secs_f64(),
        "summary": paths.summary_csv,
        "records": paths.records_jsonl,
        "derived": output.derived,
    }));
    if output.summary.is_empty() {
        if output.points.rows.is_empty() {
            bail!("{} produced no output", id.name());
        }
        println!("{}: {} points in {}", id.name(), output.points.rows.len(), paths.points_csv.display());
    } else {
        write_summary_csv(&output.summary, io::stdout().lock())?;
    }
    Ok(())
}
