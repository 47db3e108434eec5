//! Contexts, their members, and the API keys that bind a user to a context.

use std::collections::BTreeMap;
use std::sync::Arc;

use schema_core::{Context, Timestamp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::store::{Db, Family, StoreResult};

/// Identity attached to an authenticated request.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Caller {
    pub user: String,
    pub context: String,
}

impl Caller {
    pub fn new(user: impl Into<String>, context: impl Into<String>) -> Self {
        Caller {
            user: user.into(),
            context: context.into(),
        }
    }
}

/// Stored form of an API key. Only a digest of the secret is persisted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKey {
    pub token_sha256: String,
    pub user_ref: String,
    pub context_ref: String,
    pub active: bool,
    pub created_at: Timestamp,
}

/// Key seed file: `{"contexts": {slug: {"members": [..]}}, "keys": [..]}`.
/// Holding a key for a context makes the user a member of it.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KeySeed {
    #[serde(default)]
    pub contexts: BTreeMap<String, ContextSeed>,
    #[serde(default)]
    pub keys: Vec<KeySeedEntry>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSeed {
    #[serde(default)]
    pub members: Vec<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KeySeedEntry {
    pub token: String,
    pub user: String,
    pub context: String,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

pub fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

pub struct Directory {
    db: Db,
    clock: Arc<dyn Clock>,
}

impl Directory {
    pub fn new(db: Db, clock: Arc<dyn Clock>) -> Self {
        Directory { db, clock }
    }

    pub fn seed(&self, seed: &KeySeed) -> StoreResult<()> {
        for (slug, c) in &seed.contexts {
            for m in &c.members {
                self.add_member(slug, m)?;
            }
            if c.members.is_empty() {
                self.ensure_context(slug)?;
            }
        }
        for k in &seed.keys {
            self.add_key(&k.token, &k.user, &k.context, k.active)?;
        }
        Ok(())
    }

    fn ensure_context(&self, slug: &str) -> StoreResult<()> {
        if self.db.get::<Context>(Family::Contexts, slug)?.is_none() {
            match self.db.insert_new(Family::Contexts, slug, &Context::new(slug)) {
                Ok(()) | Err(crate::store::StoreError::AlreadyExists) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn add_member(&self, context: &str, user: &str) -> StoreResult<()> {
        self.ensure_context(context)?;
        self.db.update(Family::Contexts, context, |c: &mut Context| {
            c.members.insert(user.to_string());
            Ok(())
        })?;
        Ok(())
    }

    /// Registers (or replaces) a key and makes its user a context member.
    pub fn add_key(&self, token: &str, user: &str, context: &str, active: bool) -> StoreResult<()> {
        self.add_member(context, user)?;
        let digest = token_digest(token);
        let key = ApiKey {
            token_sha256: digest.clone(),
            user_ref: user.to_string(),
            context_ref: context.to_string(),
            active,
            created_at: self.clock.now(),
        };
        self.db.put(Family::ApiKeys, &digest, &key)
    }

    pub fn set_key_active(&self, token: &str, active: bool) -> StoreResult<()> {
        self.db
            .update(Family::ApiKeys, &token_digest(token), |k: &mut ApiKey| {
                k.active = active;
                Ok(())
            })?;
        Ok(())
    }

    /// Resolves a bearer token to its bound identity. Unknown and inactive
    /// keys resolve to nothing.
    pub fn authenticate(&self, token: &str) -> Option<Caller> {
        let key: ApiKey = self
            .db
            .get(Family::ApiKeys, &token_digest(token))
            .ok()
            .flatten()?;
        key.active
            .then(|| Caller::new(key.user_ref, key.context_ref))
    }

    pub fn context(&self, slug: &str) -> StoreResult<Option<Context>> {
        self.db.get(Family::Contexts, slug)
    }

    pub fn is_member(&self, user: &str, context: &str) -> bool {
        matches!(self.context(context), Ok(Some(c)) if c.is_member(user))
    }
}
