mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "jenn", version, about = "Lorenz 96 emulators trained with Jacobian enforcement")]
struct Cli {
    /// Worker threads for data generation and evaluation
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the trajectory and sensitivity datasets
    GenData(commands::GenDataArgs),
    /// Check tangent linear / adjoint consistency of the physics and of checkpoints
    VerifyTlad(commands::VerifyArgs),
    /// Train the forecast-only network, the Jacobian-enforced network, or both
    Train(commands::TrainArgs),
    /// Held-out metrics of one or two checkpoints
    Eval(commands::EvalArgs),
    /// Write forecast, tangent, adjoint and Jacobian comparison files
    ExportFigures(commands::ExportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout with status 0, usage errors get 2
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::VerifyTlad(a) => commands::verify_tlad(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportFigures(a) => commands::export_figures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
