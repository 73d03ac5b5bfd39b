use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use skytrust::config::{Method, ScenarioConfig, PRESETS};
use skytrust::harness::{run_experiment, sweep, write_sweep, write_table_csv, TABLE_ROWS};
use skytrust::ledger::{verify_chain, ChainStatus, Ledger};
use skytrust::{Error, Result};

#[derive(Parser)]
#[command(name = "skytrust", version, about = "Trust-managed UAV network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one seed.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also write trace.csv with per-round positions, energy and trust.
        #[arg(long)]
        trace: bool,
    },
    /// Run several methods over several seeds and tabulate mean ± std.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated seeds, e.g. 0,1,2.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "dtsam,cte,sbst")]
        methods: Vec<Method>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Check the hash chain of an exported ledger.
    VerifyLedger { file: PathBuf },
    /// List the named scenario presets.
    Presets,
    /// Print the fully resolved scenario as JSON, usable as a --config file.
    Config {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// JSON scenario file; keys absent from it keep their preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset (overrides the file's "preset" key).
    #[arg(long)]
    preset: Option<String>,
    /// Override one config key, e.g. --set fl.learning_rate=0.5 (value is JSON).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn insert_path(root: &mut Map<String, Value>, key: &str, value: Value) {
    match key.split_once('.') {
        None => {
            root.insert(key.to_string(), value);
        }
        Some((head, rest)) => {
            let child = root.entry(head.to_string()).or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            insert_path(child.as_object_mut().expect("object"), rest, value);
        }
    }
}

fn load_scenario(args: &ScenarioArgs, method: Option<Method>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::Config { path: "<root>".into(), message: "expected a JSON object".into() }),
                Err(e) => return Err(Error::Config { path: "<root>".into(), message: e.to_string() }),
            }
        }
        None => Map::new(),
    };
    if let Some(p) = &args.preset {
        doc.insert("preset".into(), Value::String(p.clone()));
    }
    for kv in &args.overrides {
        let (key, raw) = kv.split_once('=').ok_or_else(|| Error::Config {
            path: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        insert_path(&mut doc, key, value);
    }
    if let Some(m) = method {
        doc.insert("method".into(), Value::String(m.as_str().into()));
    }
    if let Some(s) = seed {
        doc.insert("seed".into(), Value::from(s));
    }
    ScenarioConfig::from_json_str(&Value::Object(doc).to_string())
}

fn print_report(r: &skytrust::metrics::MetricsReport, dir: &Path) {
    let pct = |x: Option<f64>| x.map_or("N/A".to_string(), |v| format!("{:.2}", v * 100.0));
    println!("{} seed {}", r.method.label(), r.seed);
    println!("  {}: {:.2}", TABLE_ROWS[0], r.accuracy * 100.0);
    println!("  {}: {:.4}", TABLE_ROWS[1], r.comm_overhead_mb_per_uav);
    println!("  {}: {}", TABLE_ROWS[2], r.energy_per_transaction.map_or("N/A".into(), |v| format!("{v:.4}")));
    println!(
        "  {}: {}",
        TABLE_ROWS[3],
        match r.convergence_rounds {
            skytrust::metrics::Convergence::Rounds(n) => n.to_string(),
            skytrust::metrics::Convergence::NotReached(n) => format!("not reached ({n} rounds)"),
            skytrust::metrics::Convergence::NotApplicable => "N/A".into(),
        }
    );
    println!("  {}: {}", TABLE_ROWS[4], pct(r.detection_rate));
    println!("  output: {}", dir.display());
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, method, seed, out, trace } => {
            let cfg = load_scenario(&scenario, method, seed)?;
            let artifacts = run_experiment(&cfg, &out, trace)?;
            print_report(&artifacts.report, &artifacts.dir);
        }
        Command::Sweep { scenario, seeds, methods, out, trace } => {
            let cfg = load_scenario(&scenario, None, None)?;
            let result = sweep(&cfg, &seeds, &methods)?;
            write_sweep(&out, &result, trace)?;
            write_table_csv(&result, std::io::stdout())?;
            eprintln!("wrote {} runs to {}", result.runs.len(), out.display());
        }
        Command::VerifyLedger { file } => {
            let f = fs::File::open(&file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
            let ledger = Ledger::read_ndjson(BufReader::new(f))?;
            match verify_chain(&ledger) {
                ChainStatus::Valid => println!("valid: {} blocks", ledger.len()),
                ChainStatus::Corrupt(h) => {
                    println!("corrupt at height {h}");
                    return Ok(ExitCode::from(1));
                }
            }
        }
        Command::Config { scenario } => {
            let cfg = load_scenario(&scenario, None, None)?;
            println!("{}", serde_json::to_string_pretty(&cfg).map_err(|e| Error::Io(e.to_string()))?);
        }
        Command::Presets => {
            for name in PRESETS {
                let c = ScenarioConfig::preset(name)?;
                println!(
                    "{name}: {} UAVs ({} rogue), {} users, {} km square, {:?}, {} rounds",
                    c.uav_count,
                    c.rogue_count(),
                    c.user_count,
                    c.area_km,
                    c.topology,
                    c.rounds
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
