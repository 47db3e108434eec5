use std::collections::BTreeMap;

use parking_lot::Mutex;

use super::{Family, KvEngine, KvTxn, StoreResult};

type Tables = BTreeMap<(Family, String), Vec<u8>>;

/// Volatile engine. Transactions hold the engine lock for their whole body
/// and buffer writes until the body succeeds.
#[derive(Default)]
pub struct MemoryEngine {
    tables: Mutex<Tables>,
}

struct Overlay<'a> {
    base: &'a Tables,
    writes: BTreeMap<(Family, String), Option<Vec<u8>>>,
}

impl KvTxn for Overlay<'_> {
    fn get(&mut self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>> {
        let k = (family, key.to_string());
        Ok(match self.writes.get(&k) {
            Some(v) => v.clone(),
            None => self.base.get(&k).cloned(),
        })
    }

    fn put(&mut self, family: Family, key: &str, value: &[u8]) -> StoreResult<()> {
        self.writes.insert((family, key.to_string()), Some(value.to_vec()));
        Ok(())
    }

    fn delete(&mut self, family: Family, key: &str) -> StoreResult<bool> {
        let existed = self.get(family, key)?.is_some();
        self.writes.insert((family, key.to_string()), None);
        Ok(existed)
    }
}

impl KvEngine for MemoryEngine {
    fn get(&self, family: Family, key: &str) -> StoreResult<Option<Vec<u8>>> {
        Ok(self.tables.lock().get(&(family, key.to_string())).cloned())
    }

    fn scan(&self, family: Family) -> StoreResult<Vec<(String, Vec<u8>)>> {
        Ok(self
            .tables
            .lock()
            .iter()
            .filter(|((f, _), _)| *f == family)
            .map(|((_, k), v)| (k.clone(), v.clone()))
            .collect())
    }

    fn transact(
        &self,
        body: &mut dyn FnMut(&mut dyn KvTxn) -> StoreResult<()>,
    ) -> StoreResult<()> {
        let mut tables = self.tables.lock();
        let mut overlay = Overlay {
            base: &tables,
            writes: BTreeMap::new(),
        };
        body(&mut overlay)?;
        let writes = overlay.writes;
        for (k, v) in writes {
            match v {
                Some(v) => {
                    tables.insert(k, v);
                }
                None => {
                    tables.remove(&k);
                }
            }
        }
        Ok(())
    }
}
