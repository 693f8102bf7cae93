//! Multi-client job server: persistence, FIFO queue, workers and the HTTP API.

mod http;
mod service;
mod store;

pub use http::{decode_input, encode_input, router, serve, spawn, ApiError, ServerHandle, CLIENT_ID_HEADER};
pub use service::{
    content_type, ArtifactRef, JobRecord, JobState, JobStatus, PipelineSource, Progress, Service, ServiceConfig,
    ServiceError, StoredPipeline, SubmitRequest, Submitted, DEFAULT_MAX_BODY_BYTES, DEFAULT_QUEUE_CAP, INTERRUPTED,
};
pub use store::{FileStore, MemoryStore, Store};

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use crate::builtins::builtin_registry;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub service: ServiceConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opens the store and the service with the builtin modules.
pub fn open_service(config: &ServerConfig) -> Result<Arc<Service>, ServerError> {
    let store: Arc<dyn Store> = match &config.data_dir {
        Some(dir) => Arc::new(FileStore::open(dir)?),
        None => Arc::new(MemoryStore::new()),
    };
    Ok(Service::open(store, Arc::new(builtin_registry()), config.service.clone())?)
}

/// Binds, opens the service and serves from a background thread.
pub fn start(config: &ServerConfig) -> Result<ServerHandle, ServerError> {
    let listener = std::net::TcpListener::bind(config.addr).map_err(|source| ServerError::Bind {
        addr: config.addr,
        source,
    })?;
    let service = open_service(config)?;
    Ok(spawn(listener, service)?)
}

/// Serves until interrupted (Ctrl-C / SIGTERM). `on_ready` receives the bound
/// address. Running jobs are not awaited; on the next start they are marked
/// interrupted.
pub fn run_until_interrupted(config: &ServerConfig, on_ready: impl FnOnce(SocketAddr)) -> Result<(), ServerError> {
    let listener = std::net::TcpListener::bind(config.addr).map_err(|source| ServerError::Bind {
        addr: config.addr,
        source,
    })?;
    listener.set_nonblocking(true)?;
    let service = open_service(config)?;
    on_ready(listener.local_addr()?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let svc = Arc::clone(&service);
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        let closing = Arc::clone(&svc);
        serve(listener, svc, async move {
            interrupted().await;
            closing.begin_shutdown();
        })
        .await
    })?;
    tracing::info!("server stopped");
    Ok(())
}

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
