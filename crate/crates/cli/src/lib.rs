//! Library backing the `mexdet` binary: argument grammar, config
//! resolution, the six subcommands, and their report writers.
//!
//! The binary is a thin wrapper around [`run`], which returns the process
//! exit code: 0 success, 1 usage error, 2 data error, 3 internal
//! invariant violation.

pub mod args;
pub mod commands;
pub mod config;
pub mod errors;
pub mod report;

use clap::Parser;
use std::panic::AssertUnwindSafe;

use args::{Cli, Command};
use commands::Ctx;
use errors::{CliError, CliResult};

fn dispatch(cli: &Cli) -> CliResult<()> {
    let ctx = Ctx {
        config: cli.config.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Synth(a) => commands::synth::run(&ctx, a),
        Command::GenRois(a) => commands::gen_rois::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Detect(a) => commands::detect::run(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
        Command::Analyze(a) => commands::analyze::run(&ctx, a),
    }
}

/// Parse `argv` and run the requested command inside a worker pool of
/// `--threads` threads. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version are successful exits; anything else is a
            // usage error (exit 1).
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: could not start {threads} worker threads: {e}");
            return 3;
        }
    };

    let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| pool.install(|| dispatch(&cli))));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            eprintln!("error: internal invariant violation: {msg}");
            CliError::Internal(msg).exit_code()
        }
    }
}
