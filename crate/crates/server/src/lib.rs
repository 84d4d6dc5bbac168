//! HTTP front end for measurement sessions.
//!
//! | method | path                          | body / query          |
//! |--------|-------------------------------|-----------------------|
//! | POST   | `/sessions`                   | `SessionConfig`       |
//! | GET    | `/sessions/{id}`              |                       |
//! | GET    | `/sessions/{id}/next-trial`   |                       |
//! | POST   | `/sessions/{id}/responses`    | `ResponseSubmission`  |
//! | POST   | `/sessions/{id}/end-rest`     |                       |
//! | GET    | `/sessions/{id}/results`      | `?partial=true`       |
//!
//! Every session is persisted under `<data_dir>/<session_id>/` as it runs.

mod api;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use pselab_core::protocol::persist::SessionWriter;
use pselab_core::protocol::SessionState;
use thiserror::Error;
use tokio::net::TcpListener;

pub use api::{router, ApiError, CreatedSession, ResponseAck, ResponseSubmission};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("address {addr} is already in use")]
    PortInUse { addr: SocketAddr },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("data directory {path} is not writable: {source}")]
    UnwritableDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("server i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

pub(crate) struct LiveSession {
    pub(crate) state: SessionState,
    pub(crate) writer: SessionWriter,
    pub(crate) results_written: bool,
}

/// Shared server state: the data directory and every open session.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: PathBuf,
    clock: Clock,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl AppState {
    /// Checks that `data_dir` can be created and written.
    pub fn new(data_dir: impl Into<PathBuf>, clock: Clock) -> Result<Self, ServerError> {
        let data_dir = data_dir.into();
        check_writable(&data_dir)?;
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir,
                clock,
                sessions: RwLock::new(HashMap::new()),
            }),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub(crate) fn now_ms(&self) -> u64 {
        (self.inner.clock)()
    }

    pub(crate) fn insert(&self, id: String, live: LiveSession) {
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(Mutex::new(live)));
    }

    pub(crate) fn get(&self, id: &str) -> Option<Arc<Mutex<LiveSession>>> {
        self.inner.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Syncs every session's trial log to disk.
    pub fn flush_all(&self) -> Result<(), ServerError> {
        let sessions: Vec<_> = self
            .inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        for s in sessions {
            let live = s.lock().unwrap_or_else(|e| e.into_inner());
            live.writer.sync().map_err(|e| ServerError::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    }
}

fn check_writable(dir: &Path) -> Result<(), ServerError> {
    let err = |source| ServerError::UnwritableDir {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(format!(".write-probe-{}", std::process::id()));
    std::fs::write(&probe, b"").map_err(err)?;
    std::fs::remove_file(&probe).map_err(err)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServerError::PortInUse { addr }
        } else {
            ServerError::Bind { addr, source }
        }
    })
}

/// Serves until `shutdown` resolves, then drains requests and syncs logs.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.flush_all()
}
