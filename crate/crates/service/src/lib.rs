//! HTTP/JSON front end for the segmentation engine.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/volumes` | NIfTI-1 bytes (optionally gzipped) | `VolumeInfo` |
//! | POST | `/sessions` | `CreateSession` | `SessionCreated` |
//! | GET | `/sessions/{id}` | | `SessionSummary` |
//! | POST | `/sessions/{id}/edit` | `EditRequest` | `EditResponse` |
//! | GET | `/sessions/{id}/mask` | `z` | `MaskSliceRLE` |
//! | GET | `/sessions/{id}/mask.nii` | | gzipped NIfTI mask |
//! | GET | `/sessions/{id}/image` | `z`, `wl`, `ww` | 8-bit grayscale PNG |
//!
//! Errors are `ErrorBody` JSON: 400 unparseable input, 404 unknown id,
//! 409 evicted id, 422 invalid prompt or slice.

pub mod app;
pub mod config;
pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use app::{router, AppState, SharedState};
pub use config::{BackendKind, ServiceConfig, BIND_ENV, DEFAULT_PORT};

/// Builds the backend and serves until the future is dropped or the process ends.
pub async fn serve(cfg: &ServiceConfig, listener: TcpListener) -> std::io::Result<()> {
    let backend = cfg.build_backend().map_err(std::io::Error::other)?;
    let state = Arc::new(AppState::new(cfg, backend));
    let app = router(state, cfg.body_limit_bytes);
    axum::serve(listener, app).await
}

/// Starts a server on an ephemeral localhost port in the current runtime.
pub async fn spawn_local(
    cfg: ServiceConfig,
) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    cfg.validate().map_err(std::io::Error::other)?;
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move { serve(&cfg, listener).await });
    Ok((addr, handle))
}
