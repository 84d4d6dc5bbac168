//! `serve`: the HTTP session service until Ctrl-C or SIGTERM.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use pselab_core::protocol::persist;
use pselab_server::{AppState, ServerError};

use crate::run::{load_params, CliError, CliResult, RunManifest};

pub const DATA_DIR_ENV: &str = "PSE_LAB_DATA_DIR";

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address (port 0 picks a free port).
    #[arg(long)]
    bind: Option<SocketAddr>,
    /// Session storage; defaults to $PSE_LAB_DATA_DIR, then `pselab-data`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeParams {
    pub bind: SocketAddr,
    pub data_dir: Option<PathBuf>,
}

impl Default for ServeParams {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
        }
    }
}

pub fn run(args: ServeArgs) -> CliResult<ExitCode> {
    let mut params: ServeParams = load_params(args.config.as_deref(), "serve")?;
    if let Some(b) = args.bind {
        params.bind = b;
    }
    if args.data_dir.is_some() {
        params.data_dir = args.data_dir.clone();
    }
    let data_dir = params
        .data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pselab-data"));
    params.data_dir = Some(data_dir.clone());

    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let state = AppState::new(&data_dir, pselab_server::system_clock()).map_err(server_error)?;
        let listener = pselab_server::bind(params.bind).await.map_err(server_error)?;
        let local = listener.local_addr().context("reading bound address")?;
        let mut manifest = RunManifest::start("serve", &params, None, &data_dir);
        println!("listening on http://{local}, data in {}", data_dir.display());
        pselab_server::serve(listener, state.clone(), shutdown_signal())
            .await
            .map_err(server_error)?;
        for dir in persist::list_sessions(&data_dir).context("listing sessions")? {
            if let Ok(rel) = dir.strip_prefix(&data_dir) {
                manifest.record_artifact(rel);
            }
        }
        manifest.finish()?;
        println!("shut down; {} session(s) flushed", state.session_count());
        Ok(ExitCode::SUCCESS)
    })
}

fn server_error(e: ServerError) -> CliError {
    CliError::Runtime(e.into())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
