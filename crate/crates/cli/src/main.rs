mod cli;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::commands::Status;

/// 2 when a solver gave up, 1 for anything else.
fn failure_code(err: &anyhow::Error) -> u8 {
    let not_converged = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<bonelayer_core::Error>(),
            Some(bonelayer_core::Error::NotConverged { .. })
        )
    });
    if not_converged {
        2
    } else {
        1
    }
}

/// The error chain joined by ": ", skipping causes the previous message
/// already spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Synthesize(a) => commands::synthesize(a),
        Command::EstimateK(a) => commands::estimate(a),
        Command::Separate(a) => commands::separate_cmd(a),
        Command::Reconstruct(a) => commands::reconstruct_cmd(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Regeval(a) => commands::regeval(a),
    };
    match outcome {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(failure_code(&e))
        }
    }
}
