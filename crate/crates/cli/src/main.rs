mod fit;
mod manifest;
mod predict;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "grblmm", version, about = "Gradient boosting for linear mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file.
    Fit(fit::FitArgs),
    /// Run the simulation designs and write error reports.
    Simulate(simulate::SimulateArgs),
    /// Predict new rows from a fitted model.
    Predict(predict::PredictArgs),
}

/// A failure with its exit code and a stable dotted identifier.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

pub const EXIT_ARG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

impl CliError {
    pub fn arg(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
            exit: EXIT_ARG,
        }
    }
}

impl From<grblmm::Error> for CliError {
    fn from(e: grblmm::Error) -> Self {
        let exit = match e.kind() {
            grblmm::ErrorKind::Config => EXIT_ARG,
            grblmm::ErrorKind::Data => EXIT_DATA,
            grblmm::ErrorKind::Numerical => EXIT_NUMERICAL,
        };
        CliError {
            code: e.code().to_string(),
            message: e.to_string(),
            exit,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        grblmm::Error::Io(e).into()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error[arg.usage]: {}", one_line(first));
            return ExitCode::from(EXIT_ARG);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Predict(args) => predict::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, one_line(&e.message));
            ExitCode::from(e.exit)
        }
    }
}
