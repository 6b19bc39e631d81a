//! `topica` command-line front end: `train`, `activate`, `analyze`, `render`
//! and `synth`.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
//! `TOPICA_THREADS` caps the worker pool.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod render;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "TOPICA_THREADS";

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    // a second call in the same process keeps the first pool; that is fine
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// report meant for stdout.
pub fn try_run<I, T>(argv: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return Ok(e.render().to_string());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    init_threads()?;
    Ok(match cli.command {
        Command::Train(a) => {
            let config = a.config.resolve()?;
            let outcome = commands::cmd_train(&config, &a.images, &a.out)?;
            let objective = outcome
                .model
                .training_log()
                .last()
                .map_or(f64::NAN, |r| r.objective);
            format!(
                "trained {} model: {} units, {} iterations, objective {objective}\n",
                outcome.model.kind(),
                outcome.model.n_units(),
                outcome.model.iterations(),
            )
        }
        Command::Activate(a) => {
            let trace = commands::cmd_activate(&a.request()?)?;
            format!("{} frames x {} units\n", trace.n_frames(), trace.n_units())
        }
        Command::Analyze(a) => commands::cmd_analyze(&a.request()?)?.render(),
        Command::Render(a) => {
            let img = commands::cmd_render(&a.model, &a.out)?;
            format!("montage {}x{}\n", img.width(), img.height())
        }
        Command::Synth(s) => {
            commands::cmd_synth(&s.request()?)?;
            String::new()
        }
    })
}

/// [`try_run`] with errors reported on stderr; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match try_run(argv) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("topica: {}", e.to_string().trim_end());
            e.exit_code()
        }
    }
}
