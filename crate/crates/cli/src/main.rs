//! Command-line front end: run a configured simulation or study.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use crossdiff::config::{parse_config, StudyKind};
use crossdiff::output::{execute, RunOptions};
use crossdiff::Error;

/// Simulate a degenerate two-population cross-diffusion system.
///
/// Exit status: 0 when every invariant check passes, 2 when one fails,
/// 1 on usage, configuration or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "crossdiff", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Study to run instead of the configured one:
    /// none, pme, epsilon, segregation or asymmetric.
    #[arg(long, value_name = "NAME")]
    study: Option<StudyKind>,

    /// Worker threads for study fan-out.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,

    /// Log every step to stderr.
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut cfg = match parse_config(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            report_error(&cli.config.display().to_string(), &e);
            return ExitCode::from(1);
        }
    };
    if let Some(kind) = cli.study {
        cfg.study.kind = kind;
        if let Err(e) = cfg.validate() {
            report_error("--study", &e);
            return ExitCode::from(1);
        }
    }

    let opts = RunOptions {
        out_dir: cli.out,
        workers: cli.workers.map(usize::from),
    };
    match execute(&cfg, &opts) {
        Ok(summary) if summary.passed() => ExitCode::SUCCESS,
        Ok(summary) => {
            eprintln!("invariant violated: {}", summary.violations.join(", "));
            if let Some(msg) = &summary.error {
                eprintln!("  {msg}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            report_error("run", &e);
            ExitCode::from(1)
        }
    }
}

fn report_error(context: &str, e: &Error) {
    match e {
        Error::Config(errs) => {
            eprintln!("error: invalid configuration ({context}):");
            for msg in errs {
                eprintln!("  {msg}");
            }
        }
        other => eprintln!("error: {context}: {other}"),
    }
}
