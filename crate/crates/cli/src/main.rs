use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;
mod files;
mod output;

use commands::{
    BudgetSweepArgs, EstimatorArgs, EstimatorKind, OptimizeArgs, RateArgs, RouteArg, ScanArgs, SimArgs,
    StageSweepArgs,
};
use error::{CliError, CliResult};
use output::{Format, Table};

/// Mean binary freshness of remote estimators of a continuous-time Markov
/// chain under query-based sampling.
#[derive(Debug, Parser)]
#[command(name = "mbf", version)]
struct Cli {
    /// Chain file (TOML).
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    /// Output file; standard output by default.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Seed for simulations.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a chain file and print its stationary law and spectrum class.
    Validate,
    /// Exact MBF for one or more estimators.
    Mbf {
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [EstimatorKind::Martingale, EstimatorKind::TauMap, EstimatorKind::PMap])]
        estimator: Vec<EstimatorKind>,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        rates: RateArgs,
    },
    /// Transition points of the MAP estimate from every state.
    MapPoints {
        #[command(flatten)]
        scan: ScanArgs,
        #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
        route: RouteArg,
    },
    /// Monte Carlo estimate of the MBF.
    Simulate {
        #[arg(long, value_enum, default_value_t = EstimatorKind::Martingale)]
        estimator: EstimatorKind,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        rates: RateArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Best sampling policy under an average-rate budget.
    Optimize {
        #[arg(long, value_enum, default_value_t = EstimatorKind::Martingale)]
        estimator: EstimatorKind,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        args: OptimizeArgs,
    },
    /// MBF against the budget under uniform and optimal policies.
    SweepBudget {
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        args: BudgetSweepArgs,
    },
    /// MBF of p-MAP estimators against the number of transition points.
    SweepStages {
        #[command(flatten)]
        args: StageSweepArgs,
    },
}

fn emit(cli: &Cli, table: &Table) -> CliResult<()> {
    let format = cli.format.unwrap_or(Format::Csv);
    match &cli.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            table.write(format, &mut w)?;
            w.flush()?;
        }
        None => table.write(format, std::io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let path = cli
        .chain
        .as_ref()
        .ok_or_else(|| CliError::input("--chain <FILE> is required"))?;
    let loaded = files::load_chain(path)?;
    let chain = &loaded.chain;
    let table = match &cli.command {
        Command::Validate => match commands::validate(&loaded, cli.format.is_some())? {
            Ok(t) => t,
            Err(text) => {
                match &cli.out {
                    Some(p) => std::fs::write(p, text)?,
                    None => print!("{text}"),
                }
                return Ok(());
            }
        },
        Command::Mbf { estimator, est, rates } => commands::mbf(chain, estimator, est, rates)?,
        Command::MapPoints { scan, route } => commands::map_points(chain, scan, *route)?,
        Command::Simulate {
            estimator,
            est,
            rates,
            sim,
        } => commands::simulate_cmd(chain, *estimator, est, rates, sim, cli.seed)?,
        Command::Optimize { estimator, est, args } => {
            let t = commands::optimize(chain, *estimator, est, args)?;
            if let Some(kind) = t.meta.iter().find(|(k, _)| *k == "kind") {
                eprintln!("policy: {}", kind.1.as_str().unwrap_or_default());
            }
            t
        }
        Command::SweepBudget { est, args } => commands::sweep_budget_cmd(chain, est, args)?,
        Command::SweepStages { args } => commands::sweep_stages_cmd(chain, args)?,
    };
    emit(cli, &table)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) | Err(CliError::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mbf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
