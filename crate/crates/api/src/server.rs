//! Wiring from configuration to a serving process.

use std::fs;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tokio::sync::oneshot;

use crate::backend::mock_tes::{MockTes, MockTesConfig};
use crate::backend::{ExecutionBackend, LocalBackend, LocalConfig, TesClient};
use crate::clock::{Clock, SystemClock};
use crate::config::{BackendKind, ServerConfig, StorageKind, StoreKind};
use crate::directory::KeySeed;
use crate::files::{LinkSigner, LocalDriver, S3Config, S3Driver, StorageDriver};
use crate::quotas::QuotaSeed;
use crate::rest;
use crate::services::Services;
use crate::store::Db;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Seed { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Files(#[from] crate::files::FilesError),
}

/// A bound listener plus the services it will serve.
pub struct Server {
    listener: TcpListener,
    services: Arc<Services>,
    reconcile_interval: Duration,
    mock_tes: Option<MockTes>,
}

/// Link-signing secret kept under the data directory so links survive restarts.
fn link_signer(data_dir: &Path) -> std::io::Result<LinkSigner> {
    let path = data_dir.join("link.key");
    if let Ok(hex_key) = fs::read_to_string(&path) {
        if let Ok(secret) = hex::decode(hex_key.trim()) {
            return Ok(LinkSigner::new(secret));
        }
    }
    let secret: [u8; 32] = rand::random();
    fs::write(&path, hex::encode(secret))?;
    Ok(LinkSigner::new(secret.to_vec()))
}

fn read_seed<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ServerError> {
    let seed_err = |message: String| ServerError::Seed {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| seed_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| seed_err(e.to_string()))
}

impl Server {
    pub fn build(cfg: &ServerConfig) -> Result<Self, ServerError> {
        fs::create_dir_all(&cfg.data_dir)?;
        let listener = TcpListener::bind(&cfg.bind)?;
        let addr = listener.local_addr()?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());

        let db = match cfg.store {
            StoreKind::Redb => Db::open(&cfg.data_dir.join("schema.redb"))?,
            StoreKind::Memory => Db::in_memory(),
        };

        let storage: Arc<dyn StorageDriver> = match cfg.storage {
            StorageKind::Local => {
                let base = cfg.public_url.clone().unwrap_or_else(|| format!("http://{addr}"));
                Arc::new(LocalDriver::new(cfg.data_dir.join("objects"), base, link_signer(&cfg.data_dir)?)?)
            }
            StorageKind::S3 => {
                let need = |v: &Option<String>, name: &str| {
                    v.clone()
                        .ok_or_else(|| ServerError::Config(format!("{name} is required for S3 storage")))
                };
                Arc::new(S3Driver::new(S3Config {
                    endpoint: need(&cfg.s3_endpoint, "SCHEMA_S3_ENDPOINT")?,
                    region: cfg.s3_region.clone(),
                    access_key: need(&cfg.s3_access_key, "SCHEMA_S3_ACCESS_KEY")?,
                    secret_key: need(&cfg.s3_secret_key, "SCHEMA_S3_SECRET_KEY")?,
                })?)
            }
        };

        let mut mock_tes = None;
        let backend: Arc<dyn ExecutionBackend> = match cfg.backend {
            BackendKind::Local => Arc::new(LocalBackend::new(LocalConfig {
                root: cfg.data_dir.join("sandbox"),
                max_concurrent: cfg.local_max_jobs,
                container_engine: cfg.container_engine.clone(),
            })?),
            BackendKind::Tes => {
                let url = cfg
                    .tes_url
                    .clone()
                    .ok_or_else(|| ServerError::Config("SCHEMA_TES_URL is required for the tes backend".into()))?;
                Arc::new(TesClient::new(url, cfg.tes_token.clone()))
            }
            BackendKind::MockTes => {
                let mock = MockTes::start(MockTesConfig {
                    token: cfg.tes_token.clone(),
                    ..MockTesConfig::default()
                })?;
                let client = TesClient::new(mock.url(), cfg.tes_token.clone());
                mock_tes = Some(mock);
                Arc::new(client)
            }
        };

        let ttl = chrono::Duration::seconds(cfg.link_ttl_secs.max(1));
        let services = Arc::new(Services::assemble(db, clock, storage, backend, ttl));
        if let Some(p) = &cfg.keys_file {
            services.directory.seed(&read_seed::<KeySeed>(p)?)?;
        }
        if let Some(p) = &cfg.quotas_file {
            let seed: QuotaSeed = read_seed(p)?;
            services.quotas.seed(&seed).map_err(|e| ServerError::Seed {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
        }
        let recovered = services
            .executions
            .recover()
            .map_err(|e| ServerError::Config(format!("recovering executions: {e}")))?;
        if recovered > 0 {
            tracing::info!(recovered, "settled executions interrupted by the previous run");
        }
        Ok(Server {
            listener,
            services,
            reconcile_interval: Duration::from_millis(cfg.reconcile_interval_ms.max(1)),
            mock_tes,
        })
    }

    /// Serves prebuilt services, e.g. ones wired to a test backend.
    pub fn from_parts(listener: TcpListener, services: Arc<Services>, reconcile_interval: Duration) -> Self {
        Server {
            listener,
            services,
            reconcile_interval,
            mock_tes: None,
        }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }

    /// Serves on a background thread until the handle is dropped.
    pub fn spawn(self) -> std::io::Result<RunningServer> {
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let reconciler = spawn_reconciler(self.services.clone(), self.reconcile_interval, stop.clone())?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = rest::router(self.services.clone());
        self.listener.set_nonblocking(true)?;
        let listener = self.listener;
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let http = thread::Builder::new().name("schema-http".into()).spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(RunningServer {
            addr,
            services: self.services,
            stop,
            shutdown: Some(tx),
            http: Some(http),
            reconciler: Some(reconciler),
            _mock_tes: self.mock_tes,
        })
    }

    /// Serves on the calling thread until interrupted.
    pub fn run(self) -> std::io::Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        let reconciler = spawn_reconciler(self.services.clone(), self.reconcile_interval, stop.clone())?;
        let app = rest::router(self.services.clone());
        self.listener.set_nonblocking(true)?;
        let listener = self.listener;
        let rt = tokio::runtime::Runtime::new()?;
        let result = rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        });
        stop.store(true, Ordering::SeqCst);
        let _ = reconciler.join();
        drop(self.mock_tes);
        result
    }
}

fn spawn_reconciler(
    services: Arc<Services>,
    interval: Duration,
    stop: Arc<AtomicBool>,
) -> std::io::Result<thread::JoinHandle<()>> {
    thread::Builder::new().name("schema-reconcile".into()).spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            let changed = services.executions.reconcile();
            if changed > 0 {
                tracing::debug!(changed, "reconcile sweep");
            }
            // sleep in short slices so shutdown is prompt
            let mut left = interval;
            while !left.is_zero() && !stop.load(Ordering::SeqCst) {
                let step = left.min(Duration::from_millis(20));
                thread::sleep(step);
                left -= step;
            }
        }
    })
}

/// Handle to a server running on background threads; stops on drop.
pub struct RunningServer {
    addr: SocketAddr,
    services: Arc<Services>,
    stop: Arc<AtomicBool>,
    shutdown: Option<oneshot::Sender<()>>,
    http: Option<thread::JoinHandle<()>>,
    reconciler: Option<thread::JoinHandle<()>>,
    _mock_tes: Option<MockTes>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.http.take() {
            let _ = t.join();
        }
        if let Some(t) = self.reconciler.take() {
            let _ = t.join();
        }
    }
}
