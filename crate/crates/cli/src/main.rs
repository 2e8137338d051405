mod commands;
mod options;
mod selftest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::options::CliError;

/// Synthetic scenes, interpolation training, alignment and evaluation.
#[derive(Parser, Debug)]
#[command(name = "ctgeo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic sequence bundles.
    Synth(commands::SynthArgs),
    /// Train the base model (stage a) or an interpolation branch (stage b).
    Train(commands::TrainArgs),
    /// Interpolate the pointmap at one skipped frame of a bundle.
    Interp(commands::InterpArgs),
    /// Run the skip-k protocol on a bundle and write the alignment.
    Align(commands::AlignArgs),
    /// Score an alignment output against its bundle.
    Eval(commands::EvalArgs),
    /// Compare methods across skip values.
    Ablate(commands::AblateArgs),
    /// End-to-end oracle pipeline and invariant checks.
    Selftest(selftest::SelftestArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Interp(a) => commands::interp(a),
        Command::Align(a) => commands::align(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Selftest(a) => selftest::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failed(_) => 3,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}
