mod args;
mod budget;
mod run;
mod sweep;

use std::process::ExitCode;

use biasblend::selftest::{run_selftest, Fault};
use clap::Parser;

use args::{Cli, Command, FaultArg};

/// Exit status for a missing or unreadable dataset.
const EXIT_NO_DATA: u8 = 2;

fn exit_for(err: &anyhow::Error) -> ExitCode {
    let missing = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<biasblend::Error>(), Some(biasblend::Error::MissingData { .. })));
    ExitCode::from(if missing { EXIT_NO_DATA } else { 1 })
}

fn selftest(fault: Option<FaultArg>) -> ExitCode {
    let fault = fault.map(|FaultArg::Conv| Fault::Conv);
    let outcomes = run_selftest(fault);
    println!("{:<14} {:<6} {:>8}  detail", "check", "result", "seconds");
    for c in &outcomes {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{:<14} {:<6} {:>8.2}  {}", c.name, mark, c.seconds, c.detail);
    }
    if outcomes.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Selftest(a) => return selftest(a.inject_fault),
        Command::Train(a) => a.resolve().and_then(|cfg| run::cmd_train(&cfg, a.force)),
        Command::BudgetCompare(a) => a.resolve().and_then(|cfg| budget::cmd_budget_compare(&cfg, a.force)),
        Command::Sweep(a) => match sweep::cmd_sweep(a) {
            Ok(o) if o.failed == 0 => Ok(()),
            Ok(o) => {
                eprintln!("{} of {} sweep points failed", o.failed, o.total);
                return ExitCode::FAILURE;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_for(&e)
        }
    }
}
