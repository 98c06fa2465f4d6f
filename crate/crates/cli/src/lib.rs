//! Command-line pipeline (`decompose`, `explain`, `metrics`) and the JSON
//! API behind `serve`.
//!
//! Exit codes: 0 on success, 2 for unreadable or invalid input, 3 when some
//! classes failed but the rest of the archive was written.

pub mod args;
pub mod commands;
pub mod data;
pub mod error;
pub mod server;

use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;

use crate::args::{Cli, Command, ServeArgs};
use crate::error::CliError;

pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Decompose(a) => commands::decompose(a),
        Command::Explain(a) => commands::explain(a).map_err(CliError::Input),
        Command::Metrics(a) => commands::metrics(a).map_err(CliError::Input),
        Command::Serve(a) => serve(a).map_err(CliError::Input),
        Command::Synth(a) => commands::synth(a).map_err(CliError::Input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let state = server::AppState::load(&args.archive, &args.manifest, args.report.as_deref())?;
    for (class_id, reason) in &state.store.skipped {
        eprintln!("warning: class {class_id} features unavailable: {reason}");
    }
    let app = server::router(Arc::new(state), args.static_dir.as_deref());
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
            .context("server error")
    })
}
