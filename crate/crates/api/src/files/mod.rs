//! Per-user object storage and signed transfer links.
//!
//! Every user owns one bucket whose name is derived from the username. All
//! adapter operations take the acting user and address only that user's
//! bucket, so there is no way to name another user's objects.

mod local;
mod s3;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Duration;
use schema_core::path::{validate_key, KeyError};
use schema_core::{MountPoint, Timestamp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;

pub use local::{LinkSigner, LocalDriver};
pub use s3::{presign_v4, PresignRequest, S3Config, S3Driver};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub bucket: String,
    pub key: String,
    pub size_bytes: u64,
    pub modified_at: Timestamp,
    pub checksum: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMethod {
    Upload,
    Download,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedLink {
    pub url: String,
    pub method: LinkMethod,
    pub expires_at: Timestamp,
}

#[derive(Debug, thiserror::Error)]
pub enum FilesError {
    #[error("object not found: {0}")]
    ObjectNotFound(String),
    #[error("invalid key {key:?}: {reason}")]
    InvalidKey { key: String, reason: KeyError },
    #[error("destination exists: {0}")]
    DestinationExists(String),
    #[error("link expired")]
    LinkExpired,
    #[error("invalid link")]
    InvalidLink,
    #[error("input object missing: {0}")]
    InputMissing(String),
    #[error("operation not supported by this storage driver")]
    Unsupported,
    #[error("storage i/o: {0}")]
    Io(String),
    #[error("object store: {0}")]
    Remote(String),
}

impl From<std::io::Error> for FilesError {
    fn from(e: std::io::Error) -> Self {
        FilesError::Io(e.to_string())
    }
}

pub type FilesResult<T> = Result<T, FilesError>;

/// Storage contract shared by the local and the S3-compatible driver.
/// Keys reaching a driver have already passed [`validate_key`].
pub trait StorageDriver: Send + Sync {
    /// Objects under `prefix`, sorted by key.
    fn list(&self, bucket: &str, prefix: &str) -> FilesResult<Vec<StoredObject>>;
    fn stat(&self, bucket: &str, key: &str) -> FilesResult<StoredObject>;
    fn read(&self, bucket: &str, key: &str) -> FilesResult<Vec<u8>>;
    fn write(&self, bucket: &str, key: &str, data: &[u8]) -> FilesResult<StoredObject>;
    fn rename(&self, bucket: &str, from: &str, to: &str, overwrite: bool) -> FilesResult<StoredObject>;
    fn delete(&self, bucket: &str, key: &str) -> FilesResult<()>;
    /// URL granting `method` on one object until `expires_at`.
    fn sign(&self, bucket: &str, key: &str, method: LinkMethod, expires_at: Timestamp) -> FilesResult<String>;

    /// Resolves a token issued by [`StorageDriver::sign`] back to its object.
    /// Only drivers that serve their own links implement this.
    fn redeem(&self, _token: &str, _method: LinkMethod, _now: Timestamp) -> FilesResult<(String, String)> {
        Err(FilesError::Unsupported)
    }

    fn download_to(&self, bucket: &str, key: &str, dest: &Path) -> FilesResult<()> {
        let data = self.read(bucket, key)?;
        fs::write(dest, data)?;
        Ok(())
    }

    fn upload_from(&self, bucket: &str, key: &str, src: &Path) -> FilesResult<StoredObject> {
        let data = fs::read(src)?;
        self.write(bucket, key, &data)
    }
}

/// Deterministic, S3-valid bucket name for a user.
pub fn bucket_for(user: &str) -> String {
    let mut slug: String = user
        .chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_alphanumeric() {
                c
            } else {
                '-'
            }
        })
        .take(40)
        .collect();
    slug = slug.trim_matches('-').to_string();
    let digest = hex::encode(Sha256::digest(user.as_bytes()));
    if slug.is_empty() {
        format!("u-{}", &digest[..12])
    } else {
        format!("u-{slug}-{}", &digest[..12])
    }
}

pub fn sha256_checksum(data: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(data)))
}

fn check_key(key: &str) -> FilesResult<()> {
    validate_key(key).map_err(|reason| FilesError::InvalidKey {
        key: key.to_string(),
        reason,
    })
}

/// Host location of an absolute workspace path inside a workspace directory.
pub fn workspace_path(workspace: &Path, path: &str) -> PathBuf {
    workspace.join(path.trim_start_matches('/'))
}

pub const DEFAULT_LINK_TTL_SECS: i64 = 15 * 60;

pub struct FilesAdapter {
    driver: Arc<dyn StorageDriver>,
    clock: Arc<dyn Clock>,
    link_ttl: Duration,
}

impl FilesAdapter {
    pub fn new(driver: Arc<dyn StorageDriver>, clock: Arc<dyn Clock>, link_ttl: Duration) -> Self {
        FilesAdapter {
            driver,
            clock,
            link_ttl,
        }
    }

    pub fn list_objects(&self, user: &str, prefix: Option<&str>) -> FilesResult<Vec<StoredObject>> {
        self.driver.list(&bucket_for(user), prefix.unwrap_or(""))
    }

    pub fn stat_object(&self, user: &str, key: &str) -> FilesResult<StoredObject> {
        check_key(key)?;
        self.driver.stat(&bucket_for(user), key)
    }

    fn link(&self, user: &str, key: &str, method: LinkMethod) -> FilesResult<SignedLink> {
        let expires_at = self.clock.now() + self.link_ttl;
        let url = self.driver.sign(&bucket_for(user), key, method, expires_at)?;
        Ok(SignedLink {
            url,
            method,
            expires_at,
        })
    }

    pub fn issue_upload_link(&self, user: &str, key: &str) -> FilesResult<SignedLink> {
        check_key(key)?;
        self.link(user, key, LinkMethod::Upload)
    }

    pub fn issue_download_link(&self, user: &str, key: &str) -> FilesResult<(SignedLink, StoredObject)> {
        let meta = self.stat_object(user, key)?;
        Ok((self.link(user, key, LinkMethod::Download)?, meta))
    }

    /// Link with an explicit lifetime, for handing mounts to a remote backend.
    pub fn issue_link_with_ttl(&self, user: &str, key: &str, method: LinkMethod, ttl: Duration) -> FilesResult<SignedLink> {
        check_key(key)?;
        let expires_at = self.clock.now() + ttl;
        let url = self.driver.sign(&bucket_for(user), key, method, expires_at)?;
        Ok(SignedLink {
            url,
            method,
            expires_at,
        })
    }

    pub fn move_object(&self, user: &str, from: &str, to: &str, overwrite: bool) -> FilesResult<StoredObject> {
        check_key(from)?;
        check_key(to)?;
        self.driver.rename(&bucket_for(user), from, to, overwrite)
    }

    pub fn delete_object(&self, user: &str, key: &str) -> FilesResult<()> {
        check_key(key)?;
        self.driver.delete(&bucket_for(user), key)
    }

    pub fn put_object(&self, user: &str, key: &str, data: &[u8]) -> FilesResult<StoredObject> {
        check_key(key)?;
        self.driver.write(&bucket_for(user), key, data)
    }

    pub fn get_object(&self, user: &str, key: &str) -> FilesResult<Vec<u8>> {
        check_key(key)?;
        self.driver.read(&bucket_for(user), key)
    }

    pub fn signed_upload(&self, token: &str, data: &[u8]) -> FilesResult<StoredObject> {
        let (bucket, key) = self.driver.redeem(token, LinkMethod::Upload, self.clock.now())?;
        self.driver.write(&bucket, &key, data)
    }

    pub fn signed_download(&self, token: &str) -> FilesResult<Vec<u8>> {
        let (bucket, key) = self.driver.redeem(token, LinkMethod::Download, self.clock.now())?;
        self.driver.read(&bucket, &key)
    }

    /// Copies each input mount's object from the user's bucket to its path in
    /// `workspace`.
    pub fn stage_inputs(&self, user: &str, inputs: &[MountPoint], workspace: &Path) -> FilesResult<Vec<PathBuf>> {
        let bucket = bucket_for(user);
        let mut staged = Vec::with_capacity(inputs.len());
        for m in inputs {
            check_key(&m.url).map_err(|_| FilesError::InputMissing(m.url.clone()))?;
            let dest = workspace_path(workspace, &m.path);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent)?;
            }
            match self.driver.download_to(&bucket, &m.url, &dest) {
                Ok(()) => staged.push(dest),
                Err(FilesError::ObjectNotFound(_)) => return Err(FilesError::InputMissing(m.url.clone())),
                Err(e) => return Err(e),
            }
        }
        Ok(staged)
    }

    /// Copies each output mount's workspace file into the user's bucket.
    /// Missing files become warnings; the remaining outputs are still collected.
    pub fn collect_outputs(
        &self,
        user: &str,
        outputs: &[MountPoint],
        workspace: &Path,
    ) -> (Vec<StoredObject>, Vec<String>) {
        let bucket = bucket_for(user);
        let mut stored = Vec::new();
        let mut warnings = Vec::new();
        for m in outputs {
            let src = workspace_path(workspace, &m.path);
            if !src.is_file() {
                warnings.push(format!("output {} was not produced", m.path));
                continue;
            }
            if let Err(e) = check_key(&m.url) {
                warnings.push(format!("output {}: {e}", m.path));
                continue;
            }
            match self.driver.upload_from(&bucket, &m.url, &src) {
                Ok(obj) => stored.push(obj),
                Err(e) => warnings.push(format!("output {}: {e}", m.path)),
            }
        }
        (stored, warnings)
    }
}
