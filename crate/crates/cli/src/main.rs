//! `scalehelm`: scale derivatives and the Hamiltonian Helmholtz inverse
//! problem from the command line.
//!
//! Exit codes: 0 success or verdict true, 1 verdict false, 2 usage error,
//! 3 numerical failure. Reports go to `--output` (standard output by
//! default); messages go to standard error.

mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use report::{render, write_text, CliError, Config, Envelope, Outcome, Status, TOOL};

fn finish<A: Serialize, R: Serialize>(cli: &Cli, args: &A, result: Result<Outcome<R>, CliError>) -> ExitCode {
    let command = cli.command.name();
    let config = Config {
        args,
        format: cli.format,
        output: cli.output.as_deref(),
    };
    let (status, outcome, error) = match result {
        Ok(o) => (o.status(), Some(o), None),
        Err(e) => (e.status(), None, Some(e.to_string())),
    };
    let message = error.clone().or_else(|| outcome.as_ref().and_then(|o| o.failure.clone()));
    if let Some(m) = &message {
        eprintln!("scalehelm {command}: {m}");
    }
    // Usage errors have no report to write.
    if status != Status::UsageError {
        let envelope = Envelope {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cli.seed,
            config: &config,
            status,
            exit_code: status.exit_code(),
            verdict: outcome.as_ref().and_then(|o| o.verdict),
            error: message,
            report: outcome.as_ref().map(|o| &o.report),
        };
        let written = render(cli.format, &envelope, outcome.as_ref().and_then(|o| o.table.as_deref()))
            .and_then(|text| write_text(cli.output.as_deref(), &text));
        if let Err(e) = written {
            eprintln!("scalehelm {command}: {e}");
            return ExitCode::from(Status::UsageError.exit_code());
        }
    }
    if status == Status::VerdictFalse && error.is_none() {
        eprintln!("scalehelm {command}: verdict false");
    }
    ExitCode::from(status.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let format = cli.format;
    match &cli.command {
        Command::Derive(a) => finish(&cli, a, commands::derive(a, format)),
        Command::Check(a) => finish(&cli, a, commands::check(a, seed)),
        Command::Reconstruct(a) => finish(&cli, a, commands::reconstruct(a, seed, format)),
        Command::Verify(a) => finish(&cli, a, commands::verify(a, seed)),
        Command::Simulate(a) => finish(&cli, a, commands::simulate(a, seed, format)),
        Command::El(a) => finish(&cli, a, commands::el(a)),
    }
}
