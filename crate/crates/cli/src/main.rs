mod commands;
mod config;
mod report;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use config::{RunConfig, Settings};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_INPUT: u8 = 1;
const EXIT_ASSERTION: u8 = 2;

/// Transport-entropy inequality toolkit.
///
/// Writes `<out>/<command>.json` plus CSV side files and prints a one-line
/// summary. Exit status: 0 success, 2 a checked inequality failed, 1 bad input.
/// `TV_THREADS` caps the worker threads.
#[derive(Debug, Parser)]
#[command(name = "tei", version)]
struct Cli {
    #[arg(value_parser = PossibleValuesParser::new(commands::COMMANDS))]
    command: String,
    /// Instance JSON: {"space": ..., "mu": ..., "nu"?: ..., "cost"?: ...}.
    instance: PathBuf,
    /// Settings JSON; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "tei-out")]
    out: PathBuf,
    /// Overrides the settings seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the settings value of `a`.
    #[arg(long)]
    a: Option<f64>,
}

fn input_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INPUT)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("TV_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("TV_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("TV_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    if let Err(e) = configure_threads() {
        return input_error(e);
    }
    let mut settings = match &cli.config {
        Some(p) => match Settings::load(p) {
            Ok(s) => s,
            Err(e) => return input_error(e),
        },
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }
    if let Some(a) = cli.a {
        settings.a = Some(a);
    }
    let text = match std::fs::read_to_string(&cli.instance) {
        Ok(t) => t,
        Err(e) => return input_error(format!("{}: {e}", cli.instance.display())),
    };
    let built = match tei_core::io::Instance::from_json(&text).and_then(|i| i.build()) {
        Ok(b) => b,
        Err(e) => return input_error(e),
    };
    let config = RunConfig { command: cli.command.clone(), instance: cli.instance, out_dir: cli.out, settings };

    let started = report::unix_seconds();
    let outcome = match commands::run(&config.command, &built, &config.settings) {
        Ok(o) => o,
        Err(e) => return input_error(e),
    };
    let finished = report::unix_seconds();
    let envelope = report::envelope(&config, &outcome, started, finished);
    if let Err(e) = report::write_outputs(&config, &envelope, &outcome) {
        return input_error(format!("writing reports to {}: {e}", config.out_dir.display()));
    }
    if outcome.passed {
        println!("{}", outcome.summary);
        ExitCode::SUCCESS
    } else {
        println!("FAILED {}", outcome.summary);
        ExitCode::from(EXIT_ASSERTION)
    }
}
