//! Shared harness: a live server on an ephemeral port with seeded keys.

#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use schema_api::client::Client;
use schema_api::config::ServerConfig;
use schema_api::server::{RunningServer, Server};
use schema_api::services::Services;
use schema_core::{ExecutionKind, ExecutionRecord, Executor, TaskRequest};
use serde_json::Value;
use tempfile::TempDir;
use uuid::Uuid;

pub const ALICE: &str = "key-alice";
pub const BOB: &str = "key-bob";
/// Carol belongs to a different context.
pub const CAROL: &str = "key-carol";
pub const DORMANT: &str = "key-dormant";

pub struct Harness {
    pub server: RunningServer,
    pub dir: TempDir,
}

impl Harness {
    pub fn start() -> Self {
        Self::with(|_| {})
    }

    pub fn with(configure: impl FnOnce(&mut ServerConfig)) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut cfg = ServerConfig::ephemeral(dir.path());
        configure(&mut cfg);
        let server = Server::build(&cfg).expect("server builds");
        seed(server.services());
        Harness {
            server: server.spawn().expect("server starts"),
            dir,
        }
    }

    pub fn client(&self, token: &str) -> Client {
        Client::new(self.server.url(), token)
    }

    pub fn services(&self) -> &Arc<Services> {
        self.server.services()
    }

    pub fn url(&self) -> String {
        self.server.url()
    }
}

pub fn seed(svc: &Services) {
    let d = &svc.directory;
    d.add_key(ALICE, "alice", "lab", true).unwrap();
    d.add_key(BOB, "bob", "lab", true).unwrap();
    d.add_key(CAROL, "carol", "other", true).unwrap();
    d.add_key(DORMANT, "alice", "lab", false).unwrap();
}

pub fn echo_task(msg: &str) -> TaskRequest {
    TaskRequest::new(vec![Executor::new("alpine", ["echo", msg])])
}

pub fn sleep_task(secs: u32) -> TaskRequest {
    TaskRequest::new(vec![Executor::new("alpine", ["sleep".to_string(), secs.to_string()])])
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// E1 feeds E2 and E3; E2 and E3 outputs land in the submitter's bucket.
pub fn diamond_workflow() -> Value {
    let text = std::fs::read_to_string(fixture("scenario-2-diamond.json")).expect("fixture");
    serde_json::from_str(&text).expect("fixture json")
}

pub fn wait_terminal(client: &Client, kind: ExecutionKind, uuid: Uuid, timeout: Duration) -> ExecutionRecord {
    let deadline = Instant::now() + timeout;
    loop {
        let rec = client.get(kind, uuid).expect("get");
        if rec.status.is_terminal() {
            return rec;
        }
        assert!(Instant::now() < deadline, "{uuid} still {:?} after {timeout:?}", rec.status);
        std::thread::sleep(Duration::from_millis(20));
    }
}
