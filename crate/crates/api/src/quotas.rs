//! Quota definitions and the reservation ledger.
//!
//! Limits cap concurrent usage. Every admitted execution holds a reservation
//! until it reaches a terminal status; the ledger keeps running totals per
//! user (across contexts) and per context. All ledger mutations happen under
//! one lock, so check-and-reserve is linearizable.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use schema_core::{Dimension, Quota, ResourceAmounts};
use serde::{Deserialize, Serialize};

use crate::directory::Directory;
use crate::store::{Db, Family, StoreError};

/// Quota seed file: `{"users": {name: Quota}, "contexts": {slug: Quota}}`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotaSeed {
    #[serde(default)]
    pub users: BTreeMap<String, Quota>,
    #[serde(default)]
    pub contexts: BTreeMap<String, Quota>,
}

#[derive(Debug, thiserror::Error)]
pub enum QuotaError {
    #[error("quota exceeded in {}", dims_to_string(.0))]
    QuotaExceeded(Vec<Dimension>),
    #[error("user is not a member of the context")]
    NotAMember,
    #[error("reservation already released")]
    AlreadyReleased,
    #[error("unknown reservation")]
    UnknownToken,
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn dims_to_string(d: &[Dimension]) -> String {
    d.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservationToken(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reservation {
    pub token: ReservationToken,
    pub user: String,
    pub context: String,
    pub amounts: ResourceAmounts,
}

/// All four quota views for one (user, context) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotaReport {
    pub user: String,
    pub context: String,
    pub user_quota: Quota,
    pub context_quota: Quota,
    pub effective: Quota,
    /// Usage of the context ledger.
    pub current_usage: ResourceAmounts,
    /// Usage of the user's ledger across all contexts.
    pub user_usage: ResourceAmounts,
}

#[derive(Default)]
struct Ledger {
    users: HashMap<String, ResourceAmounts>,
    contexts: HashMap<String, ResourceAmounts>,
    outstanding: HashMap<ReservationToken, Reservation>,
    released: std::collections::HashSet<ReservationToken>,
    next: u64,
}

impl Ledger {
    fn add(&mut self, r: &Reservation) {
        for total in [
            self.users.entry(r.user.clone()).or_default(),
            self.contexts.entry(r.context.clone()).or_default(),
        ] {
            *total = total.checked_add(&r.amounts).expect("ledger overflow");
        }
    }

    fn sub(&mut self, r: &Reservation) {
        for total in [
            self.users.entry(r.user.clone()).or_default(),
            self.contexts.entry(r.context.clone()).or_default(),
        ] {
            *total = total
                .checked_sub(&r.amounts)
                .expect("ledger would go negative");
        }
    }
}

fn user_key(user: &str) -> String {
    format!("user/{user}")
}

fn context_key(slug: &str) -> String {
    format!("context/{slug}")
}

pub struct QuotaManager {
    db: Db,
    directory: Arc<Directory>,
    ledger: Mutex<Ledger>,
}

impl QuotaManager {
    pub fn new(db: Db, directory: Arc<Directory>) -> Self {
        QuotaManager {
            db,
            directory,
            ledger: Mutex::new(Ledger {
                next: 1,
                ..Default::default()
            }),
        }
    }

    pub fn seed(&self, seed: &QuotaSeed) -> Result<(), QuotaError> {
        for (u, q) in &seed.users {
            self.set_user_quota(u, *q)?;
        }
        for (c, q) in &seed.contexts {
            self.set_context_quota(c, *q)?;
        }
        Ok(())
    }

    pub fn set_user_quota(&self, user: &str, quota: Quota) -> Result<(), QuotaError> {
        Ok(self.db.put(Family::Quotas, &user_key(user), &quota)?)
    }

    pub fn set_context_quota(&self, context: &str, quota: Quota) -> Result<(), QuotaError> {
        Ok(self.db.put(Family::Quotas, &context_key(context), &quota)?)
    }

    pub fn user_quota(&self, user: &str) -> Result<Quota, QuotaError> {
        Ok(self
            .db
            .get(Family::Quotas, &user_key(user))?
            .unwrap_or(Quota::UNLIMITED))
    }

    pub fn context_quota(&self, context: &str) -> Result<Quota, QuotaError> {
        Ok(self
            .db
            .get(Family::Quotas, &context_key(context))?
            .unwrap_or(Quota::UNLIMITED))
    }

    /// Most restrictive merge of the user's and the context's quota.
    pub fn effective_quota(&self, user: &str, context: &str) -> Result<Quota, QuotaError> {
        if !self.directory.is_member(user, context) {
            return Err(QuotaError::NotAMember);
        }
        Ok(self.user_quota(user)?.merge(&self.context_quota(context)?))
    }

    /// Admits `request` only if both the user's and the context's ledger stay
    /// within the effective quota, and records it in both.
    pub fn check_and_reserve(
        &self,
        user: &str,
        context: &str,
        request: ResourceAmounts,
    ) -> Result<ReservationToken, QuotaError> {
        let effective = self.effective_quota(user, context)?;
        let mut ledger = self.ledger.lock();
        let user_usage = ledger.users.get(user).copied().unwrap_or_default();
        let ctx_usage = ledger.contexts.get(context).copied().unwrap_or_default();
        let mut exceeded = effective.exceeded_by(&user_usage, &request);
        for d in effective.exceeded_by(&ctx_usage, &request) {
            if !exceeded.contains(&d) {
                exceeded.push(d);
            }
        }
        if !exceeded.is_empty() {
            exceeded.sort();
            return Err(QuotaError::QuotaExceeded(exceeded));
        }
        let token = ReservationToken(ledger.next);
        ledger.next += 1;
        let r = Reservation {
            token,
            user: user.to_string(),
            context: context.to_string(),
            amounts: request,
        };
        ledger.add(&r);
        ledger.outstanding.insert(token, r);
        Ok(token)
    }

    pub fn release(&self, token: ReservationToken) -> Result<(), QuotaError> {
        let mut ledger = self.ledger.lock();
        match ledger.outstanding.remove(&token) {
            Some(r) => {
                ledger.sub(&r);
                ledger.released.insert(token);
                Ok(())
            }
            None if ledger.released.contains(&token) => Err(QuotaError::AlreadyReleased),
            None => Err(QuotaError::UnknownToken),
        }
    }

    /// Re-registers a reservation recovered from persisted records.
    pub fn restore(&self, reservation: Reservation) {
        let mut ledger = self.ledger.lock();
        if ledger.outstanding.contains_key(&reservation.token) {
            return;
        }
        ledger.next = ledger.next.max(reservation.token.0 + 1);
        ledger.add(&reservation);
        ledger.outstanding.insert(reservation.token, reservation);
    }

    pub fn context_usage(&self, context: &str) -> ResourceAmounts {
        self.ledger
            .lock()
            .contexts
            .get(context)
            .copied()
            .unwrap_or_default()
    }

    pub fn user_usage(&self, user: &str) -> ResourceAmounts {
        self.ledger
            .lock()
            .users
            .get(user)
            .copied()
            .unwrap_or_default()
    }

    pub fn outstanding(&self) -> Vec<Reservation> {
        let mut v: Vec<_> = self.ledger.lock().outstanding.values().cloned().collect();
        v.sort_by_key(|r| r.token);
        v
    }

    pub fn get_quotas(&self, user: &str, context: &str) -> Result<QuotaReport, QuotaError> {
        let effective = self.effective_quota(user, context)?;
        Ok(QuotaReport {
            user: user.to_string(),
            context: context.to_string(),
            user_quota: self.user_quota(user)?,
            context_quota: self.context_quota(context)?,
            effective,
            current_usage: self.context_usage(context),
            user_usage: self.user_usage(user),
        })
    }
}
