mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;

const EXIT_DATA: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INTERNAL: u8 = 70;

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> dysflow::Result<()> {
    let mut cfg = FileConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.train.seed = seed;
        cfg.split.seed = seed;
    }
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(usize::from(jobs))
            .build_global()
            .map_err(|e| dysflow::Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let stdout = &mut std::io::stdout().lock();
    match &cli.command {
        Command::Curate(a) => commands::curate(a, &cfg, stdout),
        Command::Extract(a) => commands::extract(a, &cfg, stdout),
        Command::Train(a) => commands::train(a, &cfg, stdout),
        Command::Sweep(a) => commands::sweep(a, &cfg, stdout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.global.verbose, cli.global.quiet);
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            log::error!("{e}");
            if matches!(e, dysflow::Error::Config(_)) {
                ExitCode::from(EXIT_USAGE)
            } else if e.is_data_error() {
                ExitCode::from(EXIT_DATA)
            } else {
                ExitCode::from(EXIT_INTERNAL)
            }
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
