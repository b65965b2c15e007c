use std::net::SocketAddr;
use std::path::PathBuf;

use inrst_service::{router, AppState, ServiceConfig};
use tracing_subscriber::EnvFilter;

fn env_or(key: &str, default: &str) -> String {
    std::env::var(key).unwrap_or_else(|_| default.to_string())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    let addr: SocketAddr = env_or("INRST_ADDR", "127.0.0.1:8080").parse()?;
    let vgg = std::env::var("INRST_VGG_WEIGHTS")
        .map_err(|_| "INRST_VGG_WEIGHTS must name a VGG-19 safetensors file (or synthetic:<seed>)")?;
    let mut config = ServiceConfig::new(vgg);
    config.data_dir = std::env::var_os("INRST_DATA_DIR").map(PathBuf::from);
    if let Some(n) = std::env::var("INRST_WORKERS").ok().and_then(|v| v.parse().ok()) {
        config.workers = n;
    }
    if let Some(n) = std::env::var("INRST_UPLOAD_LIMIT").ok().and_then(|v| v.parse().ok()) {
        config.upload_limit = n;
    }

    let state = AppState::new(config.clone());
    let loaded = state.load_data_dir()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, workers = config.workers, loaded, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
