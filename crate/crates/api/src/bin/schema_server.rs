use clap::Parser;
use schema_api::config::ServerConfig;
use schema_api::server::Server;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cfg = ServerConfig::parse();
    let server = match Server::build(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("schema-server: {e}");
            std::process::exit(1);
        }
    };
    tracing::info!(addr = %server.local_addr(), backend = ?cfg.backend, "listening");
    if let Err(e) = server.run() {
        eprintln!("schema-server: {e}");
        std::process::exit(1);
    }
}
