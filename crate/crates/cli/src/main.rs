use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drbeta_cli::commands::{
    cmd_evaluate, cmd_fit, cmd_forecast, cmd_rib, cmd_simulate, EvaluateArgs, FitArgs, ForecastArgs, RibArgs,
    SimulateArgs,
};
use drbeta_cli::selftest::{cmd_selftest, SelftestArgs};

/// Realized integrated beta and the dynamic realized beta model.
#[derive(Parser)]
#[command(name = "drbeta", version)]
struct Cli {
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate prices, spot beta and noise.
    Simulate(SimulateArgs),
    /// Estimate daily integrated beta from a panel or trade files.
    Rib(RibArgs),
    /// Fit the dynamic model to a daily series.
    Fit(FitArgs),
    /// Rolling one-day-ahead forecasts.
    Forecast(ForecastArgs),
    /// Compare predictions with targets.
    Evaluate(EvaluateArgs),
    /// Fixed-seed pipeline against golden digests plus reduced checks.
    Selftest(SelftestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Rib(a) => cmd_rib(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
