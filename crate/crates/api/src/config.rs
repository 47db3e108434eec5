use std::path::PathBuf;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StoreKind {
    /// Embedded on-disk database under the data directory.
    Redb,
    /// Lost on exit.
    Memory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StorageKind {
    /// Files under the data directory, served through signed links.
    Local,
    /// An S3-compatible object store.
    S3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Host processes in per-execution sandboxes.
    Local,
    /// A remote TES endpoint.
    Tes,
    /// An in-process mock TES server.
    MockTes,
}

/// Server settings; every flag can also be set through its environment variable.
#[derive(Clone, Debug, Parser)]
#[command(name = "schema-server", version, about = "Execution gateway service")]
pub struct ServerConfig {
    #[arg(long, env = "SCHEMA_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = "SCHEMA_DATA_DIR", default_value = "./schema-data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "SCHEMA_STORE", value_enum, default_value = "redb")]
    pub store: StoreKind,
    #[arg(long, env = "SCHEMA_STORAGE", value_enum, default_value = "local")]
    pub storage: StorageKind,
    #[arg(long, env = "SCHEMA_BACKEND", value_enum, default_value = "local")]
    pub backend: BackendKind,
    #[arg(long, env = "SCHEMA_TES_URL")]
    pub tes_url: Option<String>,
    #[arg(long, env = "SCHEMA_TES_TOKEN")]
    pub tes_token: Option<String>,
    #[arg(long, env = "SCHEMA_RECONCILE_INTERVAL_MS", default_value_t = 2000)]
    pub reconcile_interval_ms: u64,
    /// JSON quota seed: `{"users": {..}, "contexts": {..}}`.
    #[arg(long, env = "SCHEMA_QUOTAS_FILE")]
    pub quotas_file: Option<PathBuf>,
    /// JSON key seed: `{"contexts": {..}, "keys": [..]}`.
    #[arg(long, env = "SCHEMA_KEYS_FILE")]
    pub keys_file: Option<PathBuf>,
    #[arg(long, env = "SCHEMA_LINK_TTL_SECS", default_value_t = 900)]
    pub link_ttl_secs: i64,
    /// Base URL placed in locally signed links; defaults to `http://<bind>`.
    #[arg(long, env = "SCHEMA_PUBLIC_URL")]
    pub public_url: Option<String>,
    #[arg(long, env = "SCHEMA_LOCAL_MAX_JOBS", default_value_t = 4)]
    pub local_max_jobs: usize,
    /// Run local executors inside this engine (e.g. `podman`).
    #[arg(long, env = "SCHEMA_CONTAINER_ENGINE")]
    pub container_engine: Option<String>,
    #[arg(long, env = "SCHEMA_S3_ENDPOINT")]
    pub s3_endpoint: Option<String>,
    #[arg(long, env = "SCHEMA_S3_REGION", default_value = "us-east-1")]
    pub s3_region: String,
    #[arg(long, env = "SCHEMA_S3_ACCESS_KEY")]
    pub s3_access_key: Option<String>,
    #[arg(long, env = "SCHEMA_S3_SECRET_KEY")]
    pub s3_secret_key: Option<String>,
}

impl ServerConfig {
    /// Defaults suited to tests: ephemeral port, in-memory store, fast polling.
    pub fn ephemeral(data_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = ServerConfig::parse_from(["schema-server"]);
        cfg.bind = "127.0.0.1:0".into();
        cfg.data_dir = data_dir.into();
        cfg.store = StoreKind::Memory;
        cfg.reconcile_interval_ms = 50;
        cfg
    }
}
