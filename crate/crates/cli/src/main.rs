//! `evowatch`: serve the monitor, replay embeddings, compute FID, generate
//! synthetic runs and validate run directories.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod embed;
mod fid;
mod serve;
mod simulate;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "evowatch", version, about = "Progressive monitoring of generative-model training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP monitor over a data root of run directories.
    Serve(serve::ServeArgs),
    /// Embed every snapshot of a run directory and write the layout export.
    Embed(embed::EmbedArgs),
    /// Fréchet distance between two raw float32 feature files.
    Fid(fid::FidArgs),
    /// Write a synthetic run directory.
    Simulate(simulate::SimulateArgs),
    /// Check every snapshot of a run directory.
    Validate(validate::ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or invalid input data (exit 2).
    Usage(String),
    /// Anything else that went wrong (exit 1).
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.command {
        Command::Serve(_) => "info",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::Embed(a) => embed::run(a),
        Command::Fid(a) => fid::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Validate(a) => validate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
