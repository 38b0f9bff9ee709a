use std::path::PathBuf;

use clap::Args;
use mssfc::io::{gen_synth, SynthSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Scenes in the training split.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Scenes in the test split, generated after the training scenes.
    #[arg(long, default_value_t = 0)]
    pub test_count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Dataset root; splits are written to `<out>/train` and `<out>/test`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &GenSynthArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if args.size < 16 {
        return Err(CliError::Usage(format!("--size {} is below the minimum of 16", args.size)));
    }
    let spec = SynthSpec {
        seed: args.seed,
        count: args.count,
        size: args.size,
        ..SynthSpec::default()
    };
    gen_synth(&spec, &args.out, "train", 0)?;
    println!("wrote {} training scenes to {}", args.count, args.out.join("train").display());
    if args.test_count > 0 {
        let test = SynthSpec {
            count: args.test_count,
            ..spec
        };
        gen_synth(&test, &args.out, "test", args.count as u64)?;
        println!("wrote {} test scenes to {}", args.test_count, args.out.join("test").display());
    }
    Ok(())
}
