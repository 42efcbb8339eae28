use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dcsim::acceptance::Suite;
use dcsim::error::ScenarioError;
use dcsim::runner::{self, Row};
use dcsim::scenario::{AnalyticTable, Mode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dcsim", version, about = "DTLS handshake cost over duty-cycled 802.15.4 link layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    SingleHop,
    MultiHop,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario or sweep file and write one row per point.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Closed-form TSCH handshake durations by slotframe length.
    Tables {
        /// Emit only one table; both are printed otherwise, separated by a
        /// blank line.
        #[arg(long, value_enum)]
        table: Option<Table>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Engset blocking, closed form against simulation, for r = 1..=r-max.
    #[command(alias = "engset-sim")]
    Engset {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        rho: f64,
        /// Largest slot count; defaults to n.
        #[arg(long)]
        r_max: Option<u32>,
        /// Simulated seconds per seed.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 10)]
        seeds: u32,
        #[arg(long, default_value_t = dcsim::scenario::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the event trace of one replication.
    Trace {
        config: PathBuf,
        rep_index: u64,
        /// Sweep point to trace.
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the acceptance criteria; exits nonzero if any fails.
    Check {
        /// Override replication counts for a quick smoke run.
        #[arg(long)]
        replications: Option<u32>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, ScenarioError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(rows: &[Row], format: Format, out: &Option<PathBuf>) -> Result<(), ScenarioError> {
    let w = output(out)?;
    match format {
        Format::Csv => runner::write_csv(rows, w),
        Format::Jsonl => runner::write_jsonl(rows, w),
    }
}

fn table_rows(table: AnalyticTable) -> Result<Vec<Row>, ScenarioError> {
    let mut cfg = ScenarioConfig::new(Mode::Analytic);
    cfg.table = Some(table);
    runner::run_scenario(&cfg)
}

fn execute(cmd: Command) -> Result<bool, ScenarioError> {
    match cmd {
        Command::Run { config, out, format, parallel } => {
            let cfg = ScenarioConfig::load(&config)?;
            let rows = match parallel {
                Some(n) => runner::run_scenario_parallel(&cfg, n)?,
                None => runner::run_scenario(&cfg)?,
            };
            emit(&rows, format, &out)?;
        }
        Command::Tables { table, out } => {
            let mut w = output(&out)?;
            let tables = match table {
                Some(Table::SingleHop) => vec![AnalyticTable::TschSingleHop],
                Some(Table::MultiHop) => vec![AnalyticTable::TschMultiHop],
                None => vec![AnalyticTable::TschSingleHop, AnalyticTable::TschMultiHop],
            };
            for (i, t) in tables.into_iter().enumerate() {
                if i > 0 {
                    writeln!(w)?;
                }
                runner::write_csv(&table_rows(t)?, &mut w)?;
            }
        }
        Command::Engset { n, rho, r_max, horizon, seeds, seed, out } => {
            let mut cfg = ScenarioConfig::new(Mode::Engset);
            cfg.n = Some(n);
            cfg.rho = Some(rho);
            cfg.r = Some(1);
            cfg.horizon_s = horizon;
            cfg.replications = Some(seeds);
            cfg.seed = Some(seed);
            cfg.sweep.insert("r".into(), (1..=r_max.unwrap_or(n).max(1)).map(Into::into).collect());
            cfg.validate()?;
            emit(&runner::run_scenario(&cfg)?, Format::Csv, &out)?;
        }
        Command::Trace { config, rep_index, point, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let points = cfg.points()?;
            let p = points
                .get(point)
                .ok_or_else(|| ScenarioError::invalid("point", format!("scenario has {} points", points.len())))?;
            let trace = runner::trace(p, rep_index)?;
            let mut w = output(&out)?;
            trace.write_to(&mut w)?;
            w.flush()?;
        }
        Command::Check { replications } => {
            let mut suite = match replications {
                Some(n) => Suite::with_replications(n),
                None => Suite::new(),
            };
            let verdicts = suite.run_all()?;
            for v in &verdicts {
                println!("{v}");
            }
            return Ok(verdicts.iter().all(|v| v.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
