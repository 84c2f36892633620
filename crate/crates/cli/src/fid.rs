use std::path::{Path, PathBuf};

use clap::Args;
use evowatch_core::ingest::decode_f32_le;
use evowatch_core::metrics::{fid_detailed, MetricsError};
use evowatch_core::FeatureMatrix;

use crate::{CmdResult, Failure, OutputFormat};

#[derive(Debug, Args)]
pub struct FidArgs {
    /// Real features: float32 little-endian, row-major.
    real: PathBuf,
    /// Generated features, same layout.
    generated: PathBuf,
    /// Values per row.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dims: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

fn load(path: &Path, dims: usize, name: &str) -> Result<FeatureMatrix, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if bytes.len() % (4 * dims) != 0 {
        return Err(Failure::Usage(format!(
            "{}: {} bytes is not a multiple of 4 * {dims}",
            path.display(),
            bytes.len()
        )));
    }
    let data = decode_f32_le(&bytes).expect("length checked");
    let ids = (0..data.len() / dims).map(|i| format!("{name}{i}")).collect();
    FeatureMatrix::new(name, ids, dims, data).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

pub fn run(args: FidArgs) -> CmdResult {
    let dims = args.dims as usize;
    let real = load(&args.real, dims, "real")?;
    let gen = load(&args.generated, dims, "generated")?;
    let report = fid_detailed(&real, &gen).map_err(|e| match e {
        MetricsError::InsufficientSamples(_) | MetricsError::DimensionMismatch(_) | MetricsError::Invalid(_) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Runtime(other.to_string()),
    })?;
    match args.format {
        OutputFormat::Text => println!("{:.6}", report.value),
        OutputFormat::Json => println!(
            "{}",
            serde_json::json!({
                "fid": report.value,
                "dims": dims,
                "real_rows": real.rows(),
                "generated_rows": gen.rows(),
                "epsilon_real": report.epsilon_real,
                "epsilon_generated": report.epsilon_gen,
            })
        ),
    }
    Ok(())
}
