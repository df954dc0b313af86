//! Read-only HTTP/JSON API over a trained model and its embedding index.

mod api;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{
    router, thumbnail_url, ApiError, Hit, IconEntry, IconsPage, KernelResponse, SetEntry, DEFAULT_BEAM_WIDTH, DEFAULT_K,
    DEFAULT_TOP_N, MAX_K, MAX_UPLOAD_BYTES, PAGE_SIZE,
};
pub use state::{ServiceState, ThumbnailCache};

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
