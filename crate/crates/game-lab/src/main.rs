//! `fbsde-game-lab`: Monte Carlo laboratory for a two-manager capital
//! injection game on partially observed stocks.
//!
//! Subcommands: `riccati` tabulates the filter error covariance, `filter-check`
//! compares it against simulation, `equilibrium` certifies the candidate
//! injection pair (stationarity residuals plus unilateral deviations, or a
//! zero-sum saddle check), and `bsde-xcheck` reconciles the deflator estimate
//! of initial wealth with a backward least-squares rollback.
//!
//! Exit codes: 0 all checks passed, 1 a statistical check failed, 2 input or
//! validation error.

use clap::{Args, Parser, Subcommand};
use fbsde_game_lab::runner::{
    cmd_bsde_xcheck, cmd_equilibrium, cmd_filter_check, cmd_riccati, init_thread_pool,
    load_and_resolve, CommandReport, EquilibriumOptions,
};
use fbsde_game_lab::Result;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "fbsde-game-lab",
    version,
    about = "Simulation and verification laboratory for a two-manager stochastic injection game"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario file (TOML). Missing keys fall back to the bundled defaults.
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Output directory for CSV tables and the JSON run manifest.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the scenario's random seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the scenario's Monte Carlo path count.
    #[arg(long, value_name = "N")]
    paths: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the filter error covariance P(t) for every block.
    Riccati(CommonArgs),
    /// Compare empirical filter error covariance with P(t) at probe times.
    FilterCheck(CommonArgs),
    /// Certify the candidate injection pair as an equilibrium.
    Equilibrium {
        #[command(flatten)]
        common: CommonArgs,
        /// Check the saddle property of J1 - (running cost of manager 2)
        /// at (candidate 1, zero) instead of the two-cost certification.
        #[arg(long)]
        zero_sum: bool,
        /// Diagnostic multiplier on manager 1's candidate injection.
        #[arg(long, value_name = "FACTOR")]
        perturb1: Option<f64>,
        /// Diagnostic multiplier on manager 2's candidate injection.
        #[arg(long, value_name = "FACTOR")]
        perturb2: Option<f64>,
    },
    /// Cross-check the deflator wealth estimate against an LSMC rollback.
    BsdeXcheck(CommonArgs),
}

fn dispatch(cli: Cli) -> Result<CommandReport> {
    match cli.command {
        Command::Riccati(common) => {
            let resolved = load_and_resolve(&common.scenario, common.seed, common.paths)?;
            cmd_riccati(&resolved, &common.out)
        }
        Command::FilterCheck(common) => {
            let resolved = load_and_resolve(&common.scenario, common.seed, common.paths)?;
            cmd_filter_check(&resolved, &common.out)
        }
        Command::Equilibrium {
            common,
            zero_sum,
            perturb1,
            perturb2,
        } => {
            let resolved = load_and_resolve(&common.scenario, common.seed, common.paths)?;
            cmd_equilibrium(
                &resolved,
                &common.out,
                EquilibriumOptions {
                    zero_sum,
                    perturb1,
                    perturb2,
                },
            )
        }
        Command::BsdeXcheck(common) => {
            let resolved = load_and_resolve(&common.scenario, common.seed, common.paths)?;
            cmd_bsde_xcheck(&resolved, &common.out)
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(report) => {
            for check in &report.checks {
                let verdict = if check.pass { "PASS" } else { "FAIL" };
                println!("{:<40} {verdict}  {}", check.name, check.detail);
            }
            if report.pass {
                println!("{}: PASS", report.command);
                ExitCode::SUCCESS
            } else {
                println!("{}: FAIL", report.command);
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
