//! Command-line front end: run scenarios, explore schedules, check stored
//! traces, and run the acceptance suite. Exit code 0 means every check
//! passed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mangrove_core::harness::checks::PropertyId;
use mangrove_core::harness::explore::explore;
use mangrove_core::harness::runner::{check_trace, run_scenario, run_scheduled, Counterexample};
use mangrove_core::harness::scenario::Scenario;
use mangrove_core::harness::suite;
use mangrove_core::sim::trace::{RunOutcome, Trace};

#[derive(Parser)]
#[command(
    name = "mangrove-sim",
    version,
    about = "Deterministic simulator for per-actor optimistic consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario under one seed and evaluate its checks.
    Run {
        /// Scenario file (TOML), or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the trace (JSON lines) here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the metrics table here.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Replay a recorded adversary schedule instead of a seeded run.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Print the metrics table.
        #[arg(long)]
        metrics: bool,
    },
    /// Enumerate adversary schedules of a tiny scenario and check safety on
    /// every one.
    Explore {
        #[arg(long)]
        scenario: String,
        /// Decision depth to enumerate (defaults to the scenario setting).
        #[arg(long)]
        depth: Option<usize>,
        /// Write the first counterexample (replayable schedule) here.
        #[arg(long)]
        cex_out: Option<PathBuf>,
    },
    /// Check named properties against a stored trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated property names.
        #[arg(long)]
        props: String,
    },
    /// Run the full acceptance suite (all bundled scenarios and budgets).
    Suite {
        /// Trim seed counts for a quick pass.
        #[arg(long)]
        quick: bool,
    },
    /// List bundled scenarios and checkable properties.
    List,
}

fn load_scenario(spec: &str) -> Result<Scenario, String> {
    if let Some(text) = suite::bundled(spec) {
        return Scenario::from_toml_str(text).map_err(|e| e.to_string());
    }
    Scenario::load(spec).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { scenario, seed, trace_out, metrics_out, schedule, metrics } => {
            let scenario = load_scenario(&scenario)?;
            let result = match schedule {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
                    let cex: Counterexample =
                        serde_json::from_str(&text).map_err(|e| e.to_string())?;
                    run_scheduled(&scenario, &cex.schedule).map_err(|e| e.to_string())?
                }
                None => run_scenario(&scenario, seed).map_err(|e| e.to_string())?,
            };
            if let Some(path) = trace_out {
                std::fs::write(path, result.trace.to_jsonl()).map_err(|e| e.to_string())?;
            }
            if let Some(path) = metrics_out {
                std::fs::write(path, result.metrics.render_table()).map_err(|e| e.to_string())?;
            }
            if metrics {
                print!("{}", result.metrics.render_table());
            }
            println!(
                "outcome: {}",
                match result.outcome {
                    RunOutcome::Quiescent => "quiescent",
                    RunOutcome::HorizonExhausted => "horizon exhausted",
                }
            );
            println!("{}", result.report.summary());
            Ok(result.report.all_pass())
        }
        Command::Explore { scenario, depth, cex_out } => {
            let scenario = load_scenario(&scenario)?;
            let report = explore(&scenario, depth).map_err(|e| e.to_string())?;
            print!("{}", report.summary());
            if let (Some(path), Some(cex)) = (cex_out, report.violations.first()) {
                std::fs::write(
                    path,
                    serde_json::to_string_pretty(cex).map_err(|e| e.to_string())?,
                )
                .map_err(|e| e.to_string())?;
            }
            Ok(report.ok())
        }
        Command::Check { trace, props } => {
            let text = std::fs::read_to_string(trace).map_err(|e| e.to_string())?;
            let trace = Trace::from_jsonl(&text).map_err(|e| e.to_string())?;
            let mut parsed = Vec::new();
            for name in props.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                parsed.push(PropertyId::parse(name).ok_or(format!("unknown property {name}"))?);
            }
            let report = check_trace(&trace, &parsed);
            println!("{}", report.summary());
            Ok(report.all_pass())
        }
        Command::Suite { quick } => {
            let mut all = true;
            for c in suite::run_acceptance(quick) {
                println!("{}", c.line());
                all &= c.pass;
            }
            Ok(all)
        }
        Command::List => {
            println!("bundled scenarios:");
            for (name, _) in suite::bundled_scenarios() {
                println!("  {name}");
            }
            println!("properties:");
            for p in PropertyId::all() {
                println!("  {}", p.name());
            }
            Ok(true)
        }
    }
}
