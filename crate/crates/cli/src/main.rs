use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mssfc_cli::args::Extra;
use mssfc_cli::commands::ablate::AblationKind;
use mssfc_cli::commands::gen_synth::GenSynthArgs;
use mssfc_cli::commands::gradcheck::GradcheckArgs;
use mssfc_cli::commands::{ablate, eval, gen_synth, gradcheck, infer, train};
use mssfc_cli::error::CliResult;

/// Multi-task building extraction and change detection.
#[derive(Debug, Parser)]
#[command(name = "mssfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic bi-temporal dataset.
    GenSynth(GenSynthArgs),
    /// Train: [CONFIG] [--resume CKPT] [--key=value ...]
    Train {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
    /// Evaluate: [CONFIG] (--checkpoint CKPT | --predictions DIR) [--split S] [--report PATH]
    Eval {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
    /// Predict masks: --checkpoint CKPT --t1 IMG --t2 IMG --out PREFIX [CONFIG]
    Infer {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
    /// Finite-difference gradient checks in float64.
    Gradcheck(GradcheckArgs),
    /// Train and tabulate an ablation: [CONFIG] [--report PATH] [--key=value ...]
    Ablate {
        #[arg(value_enum)]
        kind: AblationKind,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynth(a) => gen_synth::run(&a),
        Command::Train { rest } => train::run(Extra::parse(&rest)?),
        Command::Eval { rest } => eval::run(Extra::parse(&rest)?),
        Command::Infer { rest } => infer::run(Extra::parse(&rest)?),
        Command::Gradcheck(a) => gradcheck::run(&a),
        Command::Ablate { kind, rest } => ablate::run(kind, Extra::parse(&rest)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
