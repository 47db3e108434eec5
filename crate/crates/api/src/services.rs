use std::sync::Arc;

use chrono::Duration;

use crate::backend::ExecutionBackend;
use crate::clock::Clock;
use crate::directory::Directory;
use crate::executions::ExecutionManager;
use crate::experiments::ExperimentManager;
use crate::files::{FilesAdapter, StorageDriver};
use crate::quotas::QuotaManager;
use crate::store::Db;

/// The managers behind one service instance, wired to a shared store.
pub struct Services {
    pub db: Db,
    pub clock: Arc<dyn Clock>,
    pub directory: Arc<Directory>,
    pub quotas: Arc<QuotaManager>,
    pub files: Arc<FilesAdapter>,
    pub executions: Arc<ExecutionManager>,
    pub experiments: Arc<ExperimentManager>,
}

impl Services {
    pub fn assemble(
        db: Db,
        clock: Arc<dyn Clock>,
        storage: Arc<dyn StorageDriver>,
        backend: Arc<dyn ExecutionBackend>,
        link_ttl: Duration,
    ) -> Self {
        let directory = Arc::new(Directory::new(db.clone(), clock.clone()));
        let quotas = Arc::new(QuotaManager::new(db.clone(), directory.clone()));
        let files = Arc::new(FilesAdapter::new(storage, clock.clone(), link_ttl));
        let executions = Arc::new(ExecutionManager::new(
            db.clone(),
            directory.clone(),
            quotas.clone(),
            files.clone(),
            backend,
            clock.clone(),
        ));
        let experiments = Arc::new(ExperimentManager::new(db.clone(), directory.clone(), clock.clone()));
        Services {
            db,
            clock,
            directory,
            quotas,
            files,
            executions,
            experiments,
        }
    }
}
