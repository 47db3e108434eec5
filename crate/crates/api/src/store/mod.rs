//! Durable record storage.
//!
//! Records live in families (one per domain type), keyed by string and
//! encoded as JSON. Engines only provide byte-level transactions; [`Db`] adds
//! typed access and the status compare-and-set used by the execution manager.

mod memory;
mod redb_engine;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use schema_core::{ExecutionRecord, ExecutionStatus, Experiment, IllegalTransition, Timestamp};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

pub use memory::MemoryEngine;
pub use redb_engine::RedbEngine;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Executions,
    Experiments,
    Contexts,
    ApiKeys,
    Quotas,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Executions,
        Family::Experiments,
        Family::Contexts,
        Family::ApiKeys,
        Family::Quotas,
    ];

    pub fn table_name(self) -> &'static str {
        match self {
            Family::Executions => "executions",
            Family::Experiments => "experiments",
            Family::Contexts => "contexts",
            Family::ApiKeys => "api_keys",
            Family::Quotas => "quotas",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record not found")]
    NotFound,
    #[error("stale write: expected status {expected}, found {actual}")]
    StaleWrite {
        expected: ExecutionStatus,
        actual: ExecutionStatus,
    },
    #[error("record already exists")]
    AlreadyExists,
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error("record encoding: {0}")]
    Encoding(#[from] serde_json::Error),
    #[error("storage engine: {0}")]
    Engine(String),
    /// Raised by transaction bodies to roll back with a caller-defined reason.
    #[error("transaction aborted: {0}")]
    Aborted(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Read-write view inside one transaction.
pub trait KvTxn {
    fn get(&mut self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>>;
    fn put(&mut self, family: Family, key: &str, value: &[u8]) -> StoreResult<()>;
    fn delete(&mut self, family: Family, key: &str) -> StoreResult<bool>;
}

/// Byte-level engine contract. Transactions are serializable; a body that
/// returns an error leaves no trace.
pub trait KvEngine: Send + Sync {
    fn get(&self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>>;
    fn scan(&self, family: Family) -> StoreResult<Vec<(String, Vec<u8>)>>;
    fn transact(
        &self,
        body: &mut dyn FnMut(&mut dyn KvTxn) -> StoreResult<()>,
    ) -> StoreResult<()>;
}

/// Every record of every family, for before/after comparisons.
pub type Snapshot = BTreeMap<(Family, String), Vec<u8>>;

/// Typed access over an engine.
#[derive(Clone)]
pub struct Db {
    engine: Arc<dyn KvEngine>,
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> StoreResult<T> {
    Ok(serde_json::from_slice(bytes)?)
}

fn encode<T: Serialize>(value: &T) -> StoreResult<Vec<u8>> {
    Ok(serde_json::to_vec(value)?)
}

impl Db {
    pub fn new(engine: Arc<dyn KvEngine>) -> Self {
        Db { engine }
    }

    pub fn in_memory() -> Self {
        Db::new(Arc::new(MemoryEngine::default()))
    }

    pub fn open(path: &Path) -> StoreResult<Self> {
        Ok(Db::new(Arc::new(RedbEngine::open(path)?)))
    }

    pub fn engine(&self) -> &Arc<dyn KvEngine> {
        &self.engine
    }

    pub fn get<T: DeserializeOwned>(&self, family: Family, key: &str) -> StoreResult<Option<T>> {
        self.engine
            .get(family, key)?
            .map(|b| decode(&b))
            .transpose()
    }

    pub fn put<T: Serialize>(&self, family: Family, key: &str, value: &T) -> StoreResult<()> {
        let bytes = encode(value)?;
        self.engine
            .transact(&mut |tx| tx.put(family, key, &bytes))
    }

    /// Inserts only when no record exists under `key`.
    pub fn insert_new<T: Serialize>(&self, family: Family, key: &str, value: &T) -> StoreResult<()> {
        let bytes = encode(value)?;
        self.engine.transact(&mut |tx| {
            if tx.get(family, key)?.is_some() {
                return Err(StoreError::AlreadyExists);
            }
            tx.put(family, key, &bytes)
        })
    }

    pub fn delete(&self, family: Family, key: &str) -> StoreResult<bool> {
        let mut existed = false;
        self.engine.transact(&mut |tx| {
            existed = tx.delete(family, key)?;
            Ok(())
        })?;
        Ok(existed)
    }

    pub fn list<T: DeserializeOwned>(&self, family: Family) -> StoreResult<Vec<T>> {
        self.engine
            .scan(family)?
            .iter()
            .map(|(_, v)| decode(v))
            .collect()
    }

    /// Read-modify-write of one record. `f` may refuse by returning an error,
    /// in which case nothing is written.
    pub fn update<T, R>(
        &self,
        family: Family,
        key: &str,
        mut f: impl FnMut(&mut T) -> StoreResult<R>,
    ) -> StoreResult<(T, R)>
    where
        T: Serialize + DeserializeOwned,
    {
        let mut out = None;
        self.engine.transact(&mut |tx| {
            let bytes = tx.get(family, key)?.ok_or(StoreError::NotFound)?;
            let mut value: T = decode(&bytes)?;
            let r = f(&mut value)?;
            tx.put(family, key, &encode(&value)?)?;
            out = Some((value, r));
            Ok(())
        })?;
        Ok(out.expect("transaction body ran"))
    }

    pub fn snapshot(&self) -> StoreResult<Snapshot> {
        let mut snap = Snapshot::new();
        for family in Family::ALL {
            for (k, v) in self.engine.scan(family)? {
                snap.insert((family, k), v);
            }
        }
        Ok(snap)
    }

    // executions

    pub fn put_execution(&self, rec: &ExecutionRecord) -> StoreResult<()> {
        self.insert_new(Family::Executions, &rec.uuid.to_string(), rec)
    }

    pub fn get_execution(&self, uuid: Uuid) -> StoreResult<Option<ExecutionRecord>> {
        self.get(Family::Executions, &uuid.to_string())
    }

    pub fn list_executions(&self) -> StoreResult<Vec<ExecutionRecord>> {
        self.list(Family::Executions)
    }

    /// Arbitrary update of an execution record without a status change.
    /// Refused with [`StoreError::StaleWrite`] if the status is no longer
    /// `expected`.
    pub fn update_execution<R>(
        &self,
        uuid: Uuid,
        expected: ExecutionStatus,
        mut f: impl FnMut(&mut ExecutionRecord) -> StoreResult<R>,
    ) -> StoreResult<(ExecutionRecord, R)> {
        self.update(Family::Executions, &uuid.to_string(), |rec: &mut ExecutionRecord| {
            if rec.status != expected {
                return Err(StoreError::StaleWrite {
                    expected,
                    actual: rec.status,
                });
            }
            f(rec)
        })
    }

    /// Compare-and-set on execution status: moves the record from `expected`
    /// through each status of `path` in order, then applies `mutate`.
    pub fn transition_execution(
        &self,
        uuid: Uuid,
        expected: ExecutionStatus,
        path: &[ExecutionStatus],
        at: Timestamp,
        mut mutate: impl FnMut(&mut ExecutionRecord),
    ) -> StoreResult<ExecutionRecord> {
        let (rec, ()) = self.update_execution(uuid, expected, |rec| {
            for &next in path {
                rec.advance(next, at)?;
            }
            mutate(rec);
            Ok(())
        })?;
        Ok(rec)
    }

    // experiments

    pub fn get_experiment(&self, owner: &str, name: &str) -> StoreResult<Option<Experiment>> {
        self.get(Family::Experiments, &schema_core::model::experiment_key(owner, name))
    }

    pub fn list_experiments(&self) -> StoreResult<Vec<Experiment>> {
        self.list(Family::Experiments)
    }
}
