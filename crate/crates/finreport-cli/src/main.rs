//! `finreport` command-line interface: one subcommand per pipeline
//! stage plus fixture generation. Exit codes: 0 success, 1 invalid
//! input or config, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finreport_core::config::RunConfig;
use finreport_core::fixture::{write_fixture, FixtureSpec};
use finreport_core::pipeline;
use finreport_core::Error;

#[derive(Parser)]
#[command(
    name = "finreport",
    version,
    about = "News-aware factor pricing, risk, and reporting pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser)]
struct ConfigArg {
    /// Path to the run config (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Align prices, factors, and news into the run panel.
    Ingest(ConfigArg),
    /// Train the news+factor classifier on the training window.
    Train(ConfigArg),
    /// Classify every news-bearing panel row.
    Predict(ConfigArg),
    /// Construct FF5 and FF5-News daily factor returns.
    Factors(ConfigArg),
    /// Run per-asset time-series regressions on both factor models.
    Regress(ConfigArg),
    /// Joint zero-alpha (GRS) test for both factor models.
    Grs(ConfigArg),
    /// Fit EGARCH per symbol and estimate daily VaR.
    Risk(ConfigArg),
    /// Backtest the positive-news signal over the test window.
    Backtest(ConfigArg),
    /// Render per-stock reports from regressions and VaR.
    Report(ConfigArg),
    /// Run every stage in order.
    Pipeline(ConfigArg),
    /// Generate a synthetic dataset plus a ready-to-run config.
    GenFixture {
        /// Directory to write the fixture into.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        symbols: usize,
        #[arg(long, default_value_t = 320)]
        days: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, Error> {
    if !arg.config.exists() {
        return Err(Error::Validation(format!(
            "config file not found: {}",
            arg.config.display()
        )));
    }
    RunConfig::load(&arg.config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => println!("{text}"),
        Err(e) => eprintln!("could not serialize summary: {e}"),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(arg) => {
            let summary = pipeline::stage_ingest(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Train(arg) => {
            let summary = pipeline::stage_train(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Predict(arg) => {
            let summary = pipeline::stage_predict(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Factors(arg) => {
            let summary = pipeline::stage_factors(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Regress(arg) => {
            let summary = pipeline::stage_regress(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Grs(arg) => {
            let artifact = pipeline::stage_grs(&load_config(&arg)?)?;
            print_json(&artifact);
        }
        Command::Risk(arg) => {
            let artifact = pipeline::stage_risk(&load_config(&arg)?)?;
            print_json(&artifact);
        }
        Command::Backtest(arg) => {
            let artifact = pipeline::stage_backtest(&load_config(&arg)?)?;
            print_json(&artifact);
        }
        Command::Report(arg) => {
            let summary = pipeline::stage_report(&load_config(&arg)?)?;
            print_json(&summary);
        }
        Command::Pipeline(arg) => {
            let config = load_config(&arg)?;
            let paths = pipeline::run_pipeline(&config)?;
            println!("run complete: {}", paths.dir.display());
        }
        Command::GenFixture {
            out,
            symbols,
            days,
            seed,
        } => {
            let spec = FixtureSpec {
                symbols,
                days,
                seed,
                ..FixtureSpec::default()
            };
            let files = write_fixture(&out, &spec)?;
            println!("fixture written; config: {}", files.config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
