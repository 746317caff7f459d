//! `hvlad`: pairing, conversion, feature extraction, training, evaluation
//! and reporting for source speaker recognition on converted speech.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid arguments or settings,
//! 3 corpus or missing-input errors, 4 non-finite values during training,
//! 5 configuration or checkpoint mismatch.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Argument problems detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<hvlad::Error>()) {
        Some(e) => match e {
            hvlad::Error::InvalidConfig(_) | hvlad::Error::SizeMismatch { .. } => 2,
            hvlad::Error::NotFound(_)
            | hvlad::Error::EmptyCorpus(_)
            | hvlad::Error::EmptySpeaker(_)
            | hvlad::Error::TooFewSpeakers(_) => 3,
            hvlad::Error::NonFinite(_) => 4,
            hvlad::Error::ConfigMismatch(_) => 5,
            _ => 1,
        },
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
