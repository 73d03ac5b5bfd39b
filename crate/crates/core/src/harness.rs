//! Running experiments, seed sweeps, and the files they leave behind.
//!
//! Layout under an output root:
//!
//! ```text
//! <out>/<run-id>/summary.json
//! <out>/<run-id>/rounds.csv
//! <out>/<run-id>/ledger.ndjson   (ledger methods only)
//! <out>/<run-id>/trace.csv       (when requested)
//! <out>/table.csv, table_stats.csv, rounds.csv   (sweeps)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_cte, run_sbst};
use crate::config::{Method, ScenarioConfig};
use crate::engine::{run_dtsam, RunOutput};
use crate::error::{Error, Result};
use crate::ledger::{sha256, verify_chain, ChainStatus};
use crate::metrics::{ByteBill, Convergence, FirstDetection, MetricsReport, RoundMetrics};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const ROUNDS_CSV_VERSION: u32 = 1;

pub const ROUNDS_CSV_HEADER: [&str; 17] = [
    "method",
    "seed",
    "round",
    "accuracy",
    "detection_rate",
    "flagged",
    "bytes",
    "cumulative_mb_per_uav",
    "energy_j",
    "cumulative_energy_j",
    "transactions",
    "cumulative_transactions",
    "fl_round",
    "validation_accuracy",
    "mean_trust_honest",
    "mean_trust_rogue",
    "remaining_energy_mean",
];

pub const TABLE_ROWS: [&str; 5] = [
    "Accuracy in Trust Score Prediction (%)",
    "Communication Overhead (MB per UAV)",
    "Energy Consumption (Joules per Transaction)",
    "Convergence Time (Iterations)",
    "Rogue UAV Detection Rate (%)",
];

/// Runs the method named in `cfg.method`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput> {
    match cfg.method {
        Method::Dtsam => run_dtsam(cfg),
        Method::Cte => run_cte(cfg),
        Method::Sbst => run_sbst(cfg),
    }
}

/// Short stable hash of the fully materialized config (which includes the
/// method and seed).
pub fn run_id(cfg: &ScenarioConfig) -> String {
    let text = serde_json::to_string(&cfg.to_json()).expect("config serializes");
    let digest = sha256(text.as_bytes());
    format!("{}-s{}-{}", cfg.method.as_str(), cfg.seed, &hex::encode(digest)[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub rounds_csv_version: u32,
    pub run_id: String,
    pub method: Method,
    pub method_label: String,
    pub seed: u64,
    pub accuracy: f64,
    pub detection_rate: Option<f64>,
    pub comm_overhead_mb_per_uav: f64,
    pub energy_per_transaction_j: Option<f64>,
    pub convergence_rounds: Convergence,
    pub bytes: ByteBill,
    pub protocol_energy_j: f64,
    pub base_drain_j: f64,
    pub transactions: u64,
    pub ledger_blocks: Option<usize>,
    pub first_detection: Vec<FirstDetection>,
    pub config: ScenarioConfig,
}

impl Summary {
    pub fn new(cfg: &ScenarioConfig, out: &RunOutput) -> Self {
        let r = &out.report;
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            rounds_csv_version: ROUNDS_CSV_VERSION,
            run_id: run_id(cfg),
            method: r.method,
            method_label: r.method.label().to_string(),
            seed: r.seed,
            accuracy: r.accuracy,
            detection_rate: r.detection_rate,
            comm_overhead_mb_per_uav: r.comm_overhead_mb_per_uav,
            energy_per_transaction_j: r.energy_per_transaction,
            convergence_rounds: r.convergence_rounds,
            bytes: r.bytes,
            protocol_energy_j: r.protocol_energy_j,
            base_drain_j: r.base_drain_j,
            transactions: r.transactions,
            ledger_blocks: out.ledger.as_ref().map(|l| l.len()),
            first_detection: r.first_detection.clone(),
            config: cfg.clone(),
        }
    }
}

pub fn write_rounds_csv<W: Write>(rows: &[RoundMetrics], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(ROUNDS_CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rounds_csv<R: std::io::Read>(input: R) -> Result<Vec<RoundMetrics>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(ROUNDS_CSV_HEADER.iter().copied()) {
        return Err(Error::Io(format!("unexpected rounds.csv header: {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes one run's files under `root/<run-id>/` and returns that directory.
pub fn write_run(root: &Path, cfg: &ScenarioConfig, out: &RunOutput, trace: bool) -> Result<PathBuf> {
    let dir = root.join(run_id(cfg));
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

    let summary = Summary::new(cfg, out);
    let mut f = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::Io(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;

    write_rounds_csv(&out.report.rounds, create(&dir.join("rounds.csv"))?)?;
    if let Some(ledger) = &out.ledger {
        let mut f = create(&dir.join("ledger.ndjson"))?;
        ledger.write_ndjson(&mut f)?;
        f.flush()?;
    }
    if trace {
        let mut w = csv::Writer::from_writer(create(&dir.join("trace.csv"))?);
        for row in &out.trace {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub dir: PathBuf,
}

/// Runs `cfg` end to end and writes its files under `root`.
pub fn run_experiment(cfg: &ScenarioConfig, root: &Path, trace: bool) -> Result<RunArtifacts> {
    let out = run(cfg)?;
    if let Some(ledger) = &out.ledger {
        if let ChainStatus::Corrupt(h) = verify_chain(ledger) {
            return Err(Error::CorruptLedger(h));
        }
    }
    let dir = write_run(root, cfg, &out, trace)?;
    Ok(RunArtifacts { report: out.report, dir })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Stat { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub metric: String,
    pub method: Method,
    /// `None` where the metric does not apply, rendered as N/A.
    pub stat: Option<Stat>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Sorted by method, then seed.
    pub runs: Vec<(ScenarioConfig, RunOutput)>,
    pub methods: Vec<Method>,
    pub table: Vec<TableCell>,
}

impl SweepResult {
    pub fn reports(&self, method: Method) -> impl Iterator<Item = &MetricsReport> {
        self.runs.iter().map(|(_, o)| &o.report).filter(move |r| r.method == method)
    }

    pub fn cell(&self, metric: &str, method: Method) -> Option<Stat> {
        self.table.iter().find(|c| c.metric == metric && c.method == method).and_then(|c| c.stat)
    }
}

fn metric_values(metric: &str, reports: &[&MetricsReport]) -> Vec<f64> {
    reports
        .iter()
        .filter_map(|r| match metric {
            m if m == TABLE_ROWS[0] => Some(r.accuracy * 100.0),
            m if m == TABLE_ROWS[1] => Some(r.comm_overhead_mb_per_uav),
            m if m == TABLE_ROWS[2] => r.energy_per_transaction,
            m if m == TABLE_ROWS[3] => r.convergence_rounds.rounds().map(f64::from),
            m if m == TABLE_ROWS[4] => r.detection_rate.map(|d| d * 100.0),
            _ => None,
        })
        .collect()
}

pub fn summarize(runs: &[&MetricsReport], methods: &[Method]) -> Vec<TableCell> {
    let mut table = Vec::new();
    for metric in TABLE_ROWS {
        for &method in methods {
            let reports: Vec<&MetricsReport> = runs.iter().copied().filter(|r| r.method == method).collect();
            table.push(TableCell { metric: metric.to_string(), method, stat: stat(&metric_values(metric, &reports)) });
        }
    }
    table
}

/// Runs every (method, seed) pair of `template` in parallel.
pub fn sweep(template: &ScenarioConfig, seeds: &[u64], methods: &[Method]) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Config { path: "seeds".into(), message: "at least one seed is required".into() });
    }
    template.validate()?;
    let jobs: Vec<ScenarioConfig> = methods
        .iter()
        .flat_map(|&method| seeds.iter().map(move |&seed| ScenarioConfig { method, seed, ..template.clone() }))
        .collect();
    let mut runs: Vec<(ScenarioConfig, RunOutput)> =
        jobs.into_par_iter().map(|cfg| run(&cfg).map(|out| (cfg, out))).collect::<Result<_>>()?;
    let order = |m: Method| methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    runs.sort_by_key(|(c, _)| (order(c.method), c.seed));
    let reports: Vec<&MetricsReport> = runs.iter().map(|(_, o)| &o.report).collect();
    let table = summarize(&reports, methods);
    Ok(SweepResult { runs, methods: methods.to_vec(), table })
}

fn render(metric: &str, stat: Option<Stat>) -> String {
    match stat {
        None => "N/A".to_string(),
        Some(s) if metric == TABLE_ROWS[1] || metric == TABLE_ROWS[2] => format!("{:.4} ± {:.4}", s.mean, s.std),
        Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
    }
}

/// Wide table: one row per metric, one column per method, `mean ± std`.
pub fn write_table_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Metric".to_string()];
    header.extend(result.methods.iter().map(|m| m.label().to_string()));
    w.write_record(&header)?;
    for metric in TABLE_ROWS {
        let mut row = vec![metric.to_string()];
        row.extend(result.methods.iter().map(|&m| render(metric, result.cell(metric, m))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long table: metric, method, mean, std, n. Empty cells for N/A.
pub fn write_table_stats_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "method", "mean", "std", "n"])?;
    for cell in &result.table {
        let (mean, std, n) = match cell.stat {
            Some(s) => (s.mean.to_string(), s.std.to_string(), s.n.to_string()),
            None => (String::new(), String::new(), "0".to_string()),
        };
        w.write_record([cell.metric.as_str(), cell.method.label(), &mean, &std, &n])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every run directory plus the sweep tables and a combined rounds.csv.
pub fn write_sweep(root: &Path, result: &SweepResult, trace: bool) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::Io(format!("{}: {e}", root.display())))?;
    for (cfg, out) in &result.runs {
        write_run(root, cfg, out, trace)?;
    }
    write_table_csv(result, create(&root.join("table.csv"))?)?;
    write_table_stats_csv(result, create(&root.join("table_stats.csv"))?)?;
    let rows: Vec<RoundMetrics> = result.runs.iter().flat_map(|(_, o)| o.report.rounds.iter().cloned()).collect();
    write_rounds_csv(&rows, create(&root.join("rounds.csv"))?)?;
    Ok(())
}
