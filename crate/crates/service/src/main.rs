use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use motionprobe_service::{router, AppState};

#[derive(Parser)]
#[command(name = "motionprobe-service", version, about = "HTTP API for interactive motion analysis")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Root directory for run directories served under /artifacts.
    #[arg(long, default_value = "runs")]
    artifacts: PathBuf,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    std::fs::create_dir_all(&args.artifacts)?;
    let app = router(Arc::new(AppState::new(args.artifacts)));
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
