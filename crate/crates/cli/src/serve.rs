use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use evowatch_service::{Monitor, ServiceConfig, ServiceError};

use crate::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding one subdirectory per run.
    #[arg(long, env = "EVOWATCH_DATA_ROOT")]
    data_root: PathBuf,
    /// Address to listen on. Port 0 picks a free port; the bound address is printed.
    #[arg(long, env = "EVOWATCH_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    /// Embedding threads per run (default: available cores).
    #[arg(long, env = "EVOWATCH_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Interval between directory rescans, in milliseconds.
    #[arg(long, env = "EVOWATCH_POLL_MS", default_value_t = 500)]
    poll_ms: u64,
}

pub fn run(args: ServeArgs) -> CmdResult {
    let mut config = ServiceConfig::new(&args.data_root);
    if let Some(w) = args.workers {
        config.workers_per_run = w as usize;
    }
    config.poll_interval = Duration::from_millis(args.poll_ms.max(1));
    let monitor = Monitor::open(config).map_err(|e| match e {
        ServiceError::Invalid(m) => Failure::Usage(m),
        other => Failure::Runtime(other.to_string()),
    })?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .map_err(|e| Failure::Runtime(format!("cannot listen on {}: {e}", args.listen)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        log::info!(
            "serving {} runs from {}",
            monitor.runs().len(),
            args.data_root.display()
        );
        evowatch_service::serve(listener, monitor.clone(), interrupted())
            .await
            .map_err(|e| Failure::Runtime(format!("server error: {e}")))
    })?;
    // Workers stop after their current snapshot; an embedding still in
    // progress is abandoned and never published.
    log::info!("shut down");
    Ok(())
}

async fn interrupted() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = ctrl_c => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => ctrl_c.await,
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
    log::info!("interrupt received, shutting down");
}
