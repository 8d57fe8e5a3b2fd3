use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flexshare::analysis::OracleCaps;
use flexshare::experiment::{self, RunRecord};
use flexshare::scenario::{self, Scenario};
use flexshare::Strategy;

/// Exit status when a mandatory run leaves a service undeployed.
const EXIT_REJECTED: u8 = 2;

#[derive(Parser)]
#[command(name = "flexshare", version, about = "VNF sharing, priority and scaling decisions for a PoP")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run strategies once and write a JSON report.
    Run(RunArgs),
    /// Run the cross product of strategies, multipliers and seeds; write CSV.
    Sweep(SweepArgs),
    /// List bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML).
    #[arg(short, long, conflicts_with = "bundled", required_unless_present = "bundled")]
    scenario: Option<PathBuf>,
    /// Name of a bundled scenario.
    #[arg(short, long)]
    bundled: Option<String>,
}

impl Source {
    fn load(&self) -> anyhow::Result<Scenario> {
        Ok(match (&self.scenario, &self.bundled) {
            (Some(path), _) => scenario::load_scenario(path)?,
            (None, Some(name)) => scenario::bundled(name)?,
            (None, None) => bail!("give --scenario or --bundled"),
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Strategies to run; all when omitted.
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Vec<Strategy>,
    /// Traffic multiplier; defaults to the scenario's.
    #[arg(short)]
    n: Option<f64>,
    /// Overrides the VM generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Compare against the exhaustive optimum (small scenarios only).
    #[arg(long)]
    oracle: bool,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Strategies to sweep; all when omitted.
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Vec<Strategy>,
    /// Multipliers, e.g. `-n 1,1.2,1.4`.
    #[arg(short, value_delimiter = ',', default_value = "1,1.2,1.4,1.6,1.8,2")]
    n: Vec<f64>,
    /// Generator seeds; the scenario's own seed when omitted.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Add a wall-clock column.
    #[arg(long)]
    timing: bool,
    /// Exit nonzero when any cell leaves a service undeployed.
    #[arg(long)]
    require_all: bool,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn strategies(list: &[Strategy]) -> Vec<Strategy> {
    if list.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        list.to_vec()
    }
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let sc = args.source.load()?;
    let n = args.n.unwrap_or(sc.traffic_multiplier);
    let mut records: Vec<RunRecord> = Vec::new();
    for strategy in strategies(&args.strategies) {
        let record = if args.oracle {
            experiment::run_with_oracle(&sc, strategy, n, args.seed, OracleCaps::default())?
        } else {
            experiment::run(&sc, strategy, n, args.seed)?
        };
        log::info!("{}: cost {:.6}, {} VMs", strategy, record.summary.total_cost, record.summary.active_vms);
        for r in record.requests.iter().filter(|r| r.reason.is_some()) {
            log::warn!("{}: {} rejected: {}", strategy, r.service, r.reason.as_deref().unwrap_or(""));
        }
        records.push(record);
    }
    let mut out = output(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &records)?;
    writeln!(out)?;
    out.flush()?;
    Ok(records.iter().all(|r| r.all_deployed))
}

fn sweep(args: SweepArgs) -> anyhow::Result<bool> {
    let sc = args.source.load()?;
    let rows = experiment::sweep(&sc, &strategies(&args.strategies), &args.n, &args.seeds)?;
    let mut out = output(args.output.as_deref())?;
    experiment::write_sweep_csv(&rows, &mut out, args.timing)?;
    out.flush()?;
    Ok(!args.require_all || rows.iter().all(|r| r.record.all_deployed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Scenarios => {
            for name in scenario::BUNDLED {
                println!("{name}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_REJECTED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
