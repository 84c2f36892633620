use std::path::PathBuf;

use clap::Args;
use evowatch_core::ingest::{simulate_run, IngestError, Scenario, SimulationParams};

use crate::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// split, converge or bias.
    #[arg(long)]
    scenario: Scenario,
    /// Number of snapshots, T.
    #[arg(long, default_value_t = 6)]
    snapshots: usize,
    /// Instances per snapshot, N.
    #[arg(long, default_value_t = 150)]
    instances: usize,
    /// Feature dimension, D.
    #[arg(long, default_value_t = 10)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Training iterations between snapshots.
    #[arg(long, default_value_t = 5000)]
    cadence: u64,
    /// Run id in the manifest (default: the output directory's name).
    #[arg(long)]
    run_id: Option<String>,
    /// Manifest timestamp (default: now).
    #[arg(long)]
    created_at: Option<String>,
    /// Optimization steps recorded in the manifest's embedding config.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    no_thumbnails: bool,
}

pub fn run(args: SimulateArgs) -> CmdResult {
    let mut params = SimulationParams::new(args.scenario, args.snapshots, args.instances, args.dims, args.seed);
    params.cadence = args.cadence;
    params.thumbnails = !args.no_thumbnails;
    params.created_at = args.created_at;
    params.run_id = args
        .run_id
        .or_else(|| args.out.file_name().map(|n| n.to_string_lossy().into_owned()));
    if let Some(steps) = args.steps {
        params.embedding.steps = steps;
        params.embedding.early_exaggeration_steps = params.embedding.early_exaggeration_steps.min(steps / 4);
        params.embedding.momentum_switch_step = params.embedding.momentum_switch_step.min(steps / 4);
    }
    let manifest = simulate_run(&args.out, &params).map_err(|e| match e {
        IngestError::Io { .. } => Failure::Runtime(e.to_string()),
        other => Failure::Usage(other.to_string()),
    })?;
    eprintln!(
        "wrote {} snapshots of {} instances to {}",
        args.snapshots,
        args.instances,
        args.out.display()
    );
    println!("{}", manifest.run_id);
    Ok(())
}
