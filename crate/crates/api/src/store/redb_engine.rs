use std::path::Path;

use redb::{Database, ReadableTable, TableDefinition, WriteTransaction};

use super::{Family, KvEngine, KvTxn, StoreError, StoreResult};

fn table(family: Family) -> TableDefinition<'static, &'static str, &'static [u8]> {
    TableDefinition::new(family.table_name())
}

fn engine_err(e: impl std::fmt::Display) -> StoreError {
    StoreError::Engine(e.to_string())
}

/// Embedded on-disk engine. Every committed transaction is durable before
/// `transact` returns.
pub struct RedbEngine {
    db: Database,
}

impl RedbEngine {
    pub fn open(path: &Path) -> StoreResult<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(engine_err)?;
        }
        let db = Database::create(path).map_err(engine_err)?;
        let tx = db.begin_write().map_err(engine_err)?;
        for family in Family::ALL {
            tx.open_table(table(family)).map_err(engine_err)?;
        }
        tx.commit().map_err(engine_err)?;
        Ok(RedbEngine { db })
    }
}

struct Txn<'a> {
    tx: &'a WriteTransaction,
}

impl KvTxn for Txn<'_> {
    fn get(&mut self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>> {
        let t = self.tx.open_table(table(family)).map_err(engine_err)?;
        let v = t.get(key).map_err(engine_err)?;
        Ok(v.map(|g| g.value().to_vec()))
    }

    fn put(&mut self, family: Family, key: &str, value: &[u8]) -> StoreResult<()> {
        let mut t = self.tx.open_table(table(family)).map_err(engine_err)?;
        t.insert(key, value).map_err(engine_err)?;
        Ok(())
    }

    fn delete(&mut self, family: Family, key: &str) -> StoreResult<bool> {
        let mut t = self.tx.open_table(table(family)).map_err(engine_err)?;
        let old = t.remove(key).map_err(engine_err)?;
        Ok(old.is_some())
    }
}

impl KvEngine for RedbEngine {
    fn get(&self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>> {
        let tx = self.db.begin_read().map_err(engine_err)?;
        let t = tx.open_table(table(family)).map_err(engine_err)?;
        let v = t.get(key).map_err(engine_err)?;
        Ok(v.map(|g| g.value().to_vec()))
    }

    fn scan(&self, family: Family) -> StoreResult<Vec<(String, Vec<u8>)>> {
        let tx = self.db.begin_read().map_err(engine_err)?;
        let t = tx.open_table(table(family)).map_err(engine_err)?;
        let mut out = Vec::new();
        for entry in t.iter().map_err(engine_err)? {
            let (k, v) = entry.map_err(engine_err)?;
            out.push((k.value().to_string(), v.value().to_vec()));
        }
        Ok(out)
    }

    fn transact(
        &self,
        body: &mut dyn FnMut(&mut dyn KvTxn) -> StoreResult<()>,
    ) -> StoreResult<()> {
        let tx = self.db.begin_write().map_err(engine_err)?;
        let result = body(&mut Txn { tx: &tx });
        match result {
            Ok(()) => tx.commit().map_err(engine_err),
            Err(e) => {
                tx.abort().map_err(engine_err)?;
                Err(e)
            }
        }
    }
}
