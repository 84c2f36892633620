use std::path::PathBuf;

use clap::Args;
use evowatch_core::ingest::{list_snapshot_dirs, read_manifest, validate_snapshot, ValidationIssue};
use serde::Serialize;

use crate::{CmdResult, Failure, OutputFormat};

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Run directory (contains run.json).
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Status {
    Pass,
    Fail,
    Incomplete,
}

#[derive(Debug, Serialize)]
struct Entry {
    name: String,
    iteration: u64,
    status: Status,
    issues: Vec<ValidationIssue>,
}

pub fn run(args: ValidateArgs) -> CmdResult {
    if !args.run_dir.is_dir() {
        return Err(Failure::Usage(format!("{} is not a directory", args.run_dir.display())));
    }
    let manifest = read_manifest(&args.run_dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let dirs = list_snapshot_dirs(&args.run_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let entries: Vec<Entry> = dirs
        .iter()
        .map(|d| {
            let name = d
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let (status, issues) = if !d.complete {
                (Status::Incomplete, Vec::new())
            } else {
                match validate_snapshot(&d.path, &manifest) {
                    Ok(_) => (Status::Pass, Vec::new()),
                    Err(r) if r.is_incomplete() => (Status::Incomplete, Vec::new()),
                    Err(r) => (Status::Fail, r.issues),
                }
            };
            Entry {
                name,
                iteration: d.iteration,
                status,
                issues,
            }
        })
        .collect();
    let count = |s: Status| entries.iter().filter(|e| e.status == s).count();
    let failed = count(Status::Fail);

    match args.format {
        OutputFormat::Text => {
            for e in &entries {
                match e.status {
                    Status::Pass => println!("PASS {}", e.name),
                    Status::Incomplete => println!("INCOMPLETE {}", e.name),
                    Status::Fail => {
                        println!("FAIL {}", e.name);
                        for issue in &e.issues {
                            println!("  {issue}");
                        }
                    }
                }
            }
            println!(
                "{} passed, {failed} failed, {} incomplete",
                count(Status::Pass),
                count(Status::Incomplete)
            );
        }
        OutputFormat::Json => println!(
            "{}",
            serde_json::json!({
                "run_id": manifest.run_id,
                "ok": failed == 0,
                "snapshots": entries,
            })
        ),
    }
    if failed > 0 {
        return Err(Failure::Usage(format!("{failed} snapshot(s) failed validation")));
    }
    Ok(())
}
