use std::path::PathBuf;

use clap::{Args, ValueEnum};
use evowatch_core::ingest::{list_snapshot_dirs, read_manifest, validate_snapshot, write_atomic};
use evowatch_core::{append_iteration, batch_embed, embed_first, EmbeddingConfig, EmbeddingMode, EvolutionLayout};

use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Append snapshots one at a time, as the service does.
    Progressive,
    /// Optimize all bands jointly.
    Batch,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Run directory (contains run.json).
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Progressive)]
    mode: Mode,
    /// Output path for the layout export.
    #[arg(long)]
    out: PathBuf,
    /// Override the manifest's embedding seed.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: EmbedArgs) -> CmdResult {
    let manifest = read_manifest(&args.run_dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let dirs = list_snapshot_dirs(&args.run_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut snapshots = Vec::new();
    let mut failed = 0;
    for d in &dirs {
        if !d.complete {
            eprintln!("skipping incomplete snapshot {}", d.path.display());
            continue;
        }
        match validate_snapshot(&d.path, &manifest) {
            Ok(s) => snapshots.push(s),
            Err(report) => {
                eprintln!("{report}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Usage(format!("{failed} snapshot(s) failed validation")));
    }
    if snapshots.is_empty() {
        return Err(Failure::Usage(format!(
            "{} has no complete snapshots",
            args.run_dir.display()
        )));
    }

    let mut config = EmbeddingConfig {
        mode: match args.mode {
            Mode::Progressive => EmbeddingMode::Progressive,
            Mode::Batch => EmbeddingMode::Batch,
        },
        ..manifest.embedding.clone()
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let source = manifest.primary_source();
    let inputs: Vec<(u64, &_)> = snapshots
        .iter()
        .map(|s| (s.training_iteration, s.feature(source).expect("validated against manifest")))
        .collect();
    let embedded: Result<EvolutionLayout, _> = match args.mode {
        Mode::Batch => batch_embed(&inputs, &config),
        Mode::Progressive => {
            let (it, x) = inputs[0];
            let mut layout = embed_first(x, it, &config);
            for &(it, x) in &inputs[1..] {
                layout = layout.and_then(|l| append_iteration(&l, x, it, &config));
            }
            layout
        }
    };
    let layout = embedded.map_err(|e| Failure::Runtime(format!("embedding failed: {e}")))?;
    write_atomic(&args.out, &layout.to_json_bytes()).map_err(|e| Failure::Runtime(e.to_string()))?;
    eprintln!("wrote {} bands to {}", layout.len(), args.out.display());
    println!("{}", layout.config_hash);
    Ok(())
}
