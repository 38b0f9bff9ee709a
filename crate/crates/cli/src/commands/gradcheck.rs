use std::time::Instant;

use clap::{Args, ValueEnum};
use mssfc::gradcheck::{run_scope_with, Scope, GRADCHECK_TOLERANCE};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Ops,
    Blocks,
    Network,
    All,
}

impl ScopeArg {
    fn scopes(self) -> Vec<Scope> {
        match self {
            ScopeArg::Ops => vec![Scope::Ops],
            ScopeArg::Blocks => vec![Scope::Blocks],
            ScopeArg::Network => vec![Scope::Network],
            ScopeArg::All => vec![Scope::Ops, Scope::Blocks, Scope::Network],
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(value_enum)]
    pub scope: ScopeArg,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Append a case with a deliberately wrong backward.
    #[arg(long, hide = true)]
    pub inject_faulty_op: bool,
}

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    if args.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let start = Instant::now();
    let mut failures = Vec::new();
    for scope in args.scope.scopes() {
        let last = scope == *args.scope.scopes().last().expect("non-empty");
        let inject = args.inject_faulty_op && last;
        run_scope_with(scope, &args.seeds, inject, |r| {
            let status = if r.passed() { "ok" } else { "FAIL" };
            match &r.error {
                Some(e) => println!("{status} {} seed={} error: {e}", r.name, r.seed),
                None => println!(
                    "{status} {} seed={} max_rel_err={:.3e} worst={} coords={}",
                    r.name, r.seed, r.max_rel_err, r.worst_param, r.coords
                ),
            }
            if !r.passed() {
                failures.push(format!("{} (seed {})", r.name, r.seed));
            }
        });
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} case(s) above {GRADCHECK_TOLERANCE:e}: {}",
            failures.len(),
            failures.join(", ")
        )))
    }
}
