//! Command-line front end: describe a trial, fit the outcome models, run the bootstrap
//! cost-effectiveness analysis, compare missing-data methods, or simulate trials.

mod commands;
mod config;
mod error;
mod output;

use clap::{Parser, Subcommand};

use config::{Overrides, SimOverrides};

#[derive(Parser)]
#[command(name = "trialcea", version, about = "Trial-based cost-effectiveness analysis with repeated measures missing at random")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Missingness patterns and descriptive statistics.
    Describe(Overrides),
    /// Fit the utility and cost models and report their coefficients.
    Fit(Overrides),
    /// Bootstrap cost-effectiveness analysis: plane, acceptability curve and summary.
    Cea(Overrides),
    /// Complete cases, multiple imputation and mixed models side by side.
    Compare(Overrides),
    /// Generate a trial with known truth, and optionally run a repeated-sampling study.
    Simulate {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        sim: SimOverrides,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Describe(o) => commands::describe(o.resolve()?),
        Command::Fit(o) => commands::fit(o.resolve()?),
        Command::Cea(o) => commands::cea(o.resolve()?),
        Command::Compare(o) => commands::compare(o.resolve()?),
        Command::Simulate { common, sim } => {
            let mut c = common.resolve()?;
            sim.apply(&mut c, common.seed.is_some())?;
            commands::simulate(c)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.kind.exit_code());
    }
}
