//! `ucc` command-line driver.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig, Settings};
use ucc_core::UccError;

#[derive(Parser, Debug)]
#[command(name = "ucc", version, about = "Weakly supervised clustering from unique class counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Per-run override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train a model on bags from `data.train` and write a checkpoint.
    Train,
    /// Cluster the instances of `data.eval` with the checkpoint's features.
    Cluster,
    /// Bag-level ucc accuracy and confusion matrix on `data.eval`.
    EvalUcc,
    /// Segment the images in `data.eval` and score the masks.
    EvalSeg,
    /// Check the theoretical properties on `data.eval`.
    VerifyProps,
    /// Write a synthetic blob pool or texture image set.
    GenData,
    /// Print every configuration key with its default.
    Keys,
}

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }

    /// Same class, message prefixed with `context`.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Failure::Input(m) => Failure::Input(format!("{context}: {m}")),
            Failure::Numeric(m) => Failure::Numeric(format!("{context}: {m}")),
        }
    }
}

impl From<UccError> for Failure {
    fn from(e: UccError) -> Self {
        match e {
            UccError::Numeric(_) | UccError::Diverged { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

/// Layered settings plus any override problems, reported together with value errors.
fn settings(cli: &Cli) -> Result<(Settings, ConfigError), Failure> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    let mut err = ConfigError::default();
    for kv in &cli.set {
        if let Err(e) = s.apply_override(kv) {
            err.problems.extend(e.problems);
        }
    }
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string())?;
    }
    Ok((s, err))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::Keys = cli.command {
        for (k, v, help) in config::KEYS {
            println!("{k} = {v}\t# {help}");
        }
        return Ok(());
    }
    let (s, mut err) = settings(cli)?;
    let cfg = match RunConfig::from_settings(&s) {
        Ok(cfg) if err.problems.is_empty() => cfg,
        Ok(_) => return Err(err.into()),
        Err(e) => {
            err.problems.extend(e.problems);
            return Err(err.into());
        }
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Input(format!("cannot create output directory {}: {e}", cli.out.display())))?;
    commands::write_text(&cli.out.join("config.resolved"), &s.snapshot())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Train => commands::train(&cfg, out),
        Command::Cluster => commands::cluster(&cfg, out),
        Command::EvalUcc => commands::eval_ucc(&cfg, out),
        Command::EvalSeg => commands::eval_seg(&cfg, out),
        Command::VerifyProps => commands::verify_props(&cfg, out),
        Command::GenData => commands::gen_data(&cfg, out),
        Command::Keys => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
