use std::path::PathBuf;

use clap::Parser;

use egavatar::assets::load_settings;
use egavatar::pipeline::RenderSettings;
use egavatar_service::{router, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "egavatar-service", version, about = "Avatar editing service")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of `.egava` bundles that sessions can open by name.
    #[arg(long, default_value = ".")]
    bundle_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    max_sessions: usize,
    /// Render worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Render settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Err(e) = serve(args).await {
        eprintln!("error: {e}");
        std::process::exit(3);
    }
}

async fn serve(args: Args) -> Result<(), String> {
    let settings = match &args.config {
        Some(p) => load_settings(p).map_err(|e| e.to_string())?,
        None => RenderSettings::default(),
    };
    let state = AppState::new(ServiceConfig {
        bundle_dir: args.bundle_dir,
        max_sessions: args.max_sessions,
        render_threads: args.jobs,
        settings,
        ..ServiceConfig::default()
    })?;
    let addr = format!("{}:{}", args.host, args.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| format!("{addr}: {e}"))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state)).await.map_err(|e| e.to_string())
}
