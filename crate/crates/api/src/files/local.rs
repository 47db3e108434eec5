//! Filesystem storage driver. The service serves its own links at
//! `/storage/signed/{token}`, where the token is an HMAC-signed claim naming
//! one object, one method and an expiry.
//!
//! On-disk layout: `<root>/<bucket>/d_<segment>/.../f_<leaf>`. Prefixing
//! directories and leaves differently lets `a` and `a/x` coexist.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FilesError, FilesResult, LinkMethod, StorageDriver, StoredObject};
use schema_core::Timestamp;

type HmacSha256 = Hmac<Sha256>;

#[derive(Serialize, Deserialize)]
struct Claim {
    b: String,
    k: String,
    m: LinkMethod,
    /// Expiry, milliseconds since the epoch.
    e: i64,
}

#[derive(Clone)]
pub struct LinkSigner {
    secret: Vec<u8>,
}

impl LinkSigner {
    pub fn new(secret: Vec<u8>) -> Self {
        LinkSigner { secret }
    }

    pub fn random() -> Self {
        let mut secret = vec![0u8; 32];
        rand::thread_rng().fill_bytes(&mut secret);
        LinkSigner { secret }
    }

    fn mac(&self, payload: &[u8]) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length");
        mac.update(payload);
        mac
    }

    pub fn issue(&self, bucket: &str, key: &str, method: LinkMethod, expires_at: Timestamp) -> String {
        let claim = Claim {
            b: bucket.to_string(),
            k: key.to_string(),
            m: method,
            e: expires_at.timestamp_millis(),
        };
        let payload = serde_json::to_vec(&claim).expect("claim serializes");
        let sig = self.mac(&payload).finalize().into_bytes();
        format!("{}.{}", URL_SAFE_NO_PAD.encode(&payload), URL_SAFE_NO_PAD.encode(sig))
    }

    /// Returns `(bucket, key)` if the token is authentic, matches `method`
    /// and `now` is not past its expiry.
    pub fn verify(&self, token: &str, method: LinkMethod, now: Timestamp) -> FilesResult<(String, String)> {
        let (p, s) = token.split_once('.').ok_or(FilesError::InvalidLink)?;
        let payload = URL_SAFE_NO_PAD.decode(p).map_err(|_| FilesError::InvalidLink)?;
        let sig = URL_SAFE_NO_PAD.decode(s).map_err(|_| FilesError::InvalidLink)?;
        self.mac(&payload).verify_slice(&sig).map_err(|_| FilesError::InvalidLink)?;
        let claim: Claim = serde_json::from_slice(&payload).map_err(|_| FilesError::InvalidLink)?;
        if claim.m != method {
            return Err(FilesError::InvalidLink);
        }
        if now.timestamp_millis() > claim.e {
            return Err(FilesError::LinkExpired);
        }
        Ok((claim.b, claim.k))
    }
}

pub struct LocalDriver {
    root: PathBuf,
    base_url: String,
    signer: LinkSigner,
}

impl LocalDriver {
    pub fn new(root: impl Into<PathBuf>, base_url: impl Into<String>, signer: LinkSigner) -> FilesResult<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(".tmp"))?;
        Ok(LocalDriver {
            root,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            signer,
        })
    }

    fn object_path(&self, bucket: &str, key: &str) -> PathBuf {
        let mut p = self.root.join(bucket);
        let mut segs = key.split('/').peekable();
        while let Some(seg) = segs.next() {
            if segs.peek().is_some() {
                p.push(format!("d_{seg}"));
            } else {
                p.push(format!("f_{seg}"));
            }
        }
        p
    }

    fn temp_path(&self) -> PathBuf {
        let mut n = [0u8; 12];
        rand::thread_rng().fill_bytes(&mut n);
        self.root.join(".tmp").join(hex::encode(n))
    }

    fn describe(&self, bucket: &str, key: &str, path: &Path) -> FilesResult<StoredObject> {
        let meta = match fs::metadata(path) {
            Ok(m) if m.is_file() => m,
            Ok(_) => return Err(FilesError::ObjectNotFound(key.to_string())),
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(FilesError::ObjectNotFound(key.to_string())),
            Err(e) => return Err(e.into()),
        };
        let mut hasher = Sha256::new();
        let mut f = fs::File::open(path)?;
        std::io::copy(&mut f, &mut hasher)?;
        Ok(StoredObject {
            bucket: bucket.to_string(),
            key: key.to_string(),
            size_bytes: meta.len(),
            modified_at: meta.modified().map(DateTime::<Utc>::from).unwrap_or_else(|_| Utc::now()),
            checksum: format!("sha256:{}", hex::encode(hasher.finalize())),
        })
    }

    /// Moves a finished temp file into place, recreating parents if a
    /// concurrent delete pruned them.
    fn place(&self, tmp: &Path, dest: &Path) -> FilesResult<()> {
        let mut attempts = 0;
        loop {
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent)?;
            }
            match fs::rename(tmp, dest) {
                Ok(()) => return Ok(()),
                Err(e) if e.kind() == ErrorKind::NotFound && attempts < 3 => attempts += 1,
                Err(e) => {
                    let _ = fs::remove_file(tmp);
                    return Err(e.into());
                }
            }
        }
    }

    /// Removes now-empty directories between `path` and its bucket root.
    fn prune(&self, bucket: &str, path: &Path) {
        let stop = self.root.join(bucket);
        let mut dir = path.parent();
        while let Some(d) = dir {
            if d == stop || fs::remove_dir(d).is_err() {
                break;
            }
            dir = d.parent();
        }
    }

    fn walk(&self, bucket: &str, dir: &Path, prefix: &str, out: &mut Vec<StoredObject>) -> FilesResult<()> {
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let ty = entry.file_type()?;
            if let Some(seg) = name.strip_prefix("d_").filter(|_| ty.is_dir()) {
                self.walk(bucket, &entry.path(), &format!("{prefix}{seg}/"), out)?;
            } else if let Some(seg) = name.strip_prefix("f_").filter(|_| ty.is_file()) {
                let key = format!("{prefix}{seg}");
                match self.describe(bucket, &key, &entry.path()) {
                    Ok(o) => out.push(o),
                    // deleted between read_dir and stat
                    Err(FilesError::ObjectNotFound(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }
}

impl StorageDriver for LocalDriver {
    fn list(&self, bucket: &str, prefix: &str) -> FilesResult<Vec<StoredObject>> {
        let mut out = Vec::new();
        self.walk(bucket, &self.root.join(bucket), "", &mut out)?;
        out.retain(|o| o.key.starts_with(prefix));
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    fn stat(&self, bucket: &str, key: &str) -> FilesResult<StoredObject> {
        self.describe(bucket, key, &self.object_path(bucket, key))
    }

    fn read(&self, bucket: &str, key: &str) -> FilesResult<Vec<u8>> {
        match fs::read(self.object_path(bucket, key)) {
            Ok(d) => Ok(d),
            Err(e) if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::IsADirectory) => {
                Err(FilesError::ObjectNotFound(key.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn write(&self, bucket: &str, key: &str, data: &[u8]) -> FilesResult<StoredObject> {
        let tmp = self.temp_path();
        fs::write(&tmp, data)?;
        let dest = self.object_path(bucket, key);
        self.place(&tmp, &dest)?;
        self.describe(bucket, key, &dest)
    }

    fn rename(&self, bucket: &str, from: &str, to: &str, overwrite: bool) -> FilesResult<StoredObject> {
        let src = self.object_path(bucket, from);
        if !src.is_file() {
            return Err(FilesError::ObjectNotFound(from.to_string()));
        }
        if from == to {
            return self.describe(bucket, to, &src);
        }
        let dest = self.object_path(bucket, to);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        if overwrite {
            fs::rename(&src, &dest).map_err(|e| match e.kind() {
                ErrorKind::NotFound => FilesError::ObjectNotFound(from.to_string()),
                _ => e.into(),
            })?;
        } else {
            // hard_link refuses an existing destination atomically
            match fs::hard_link(&src, &dest) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    return Err(FilesError::DestinationExists(to.to_string()))
                }
                Err(e) if e.kind() == ErrorKind::NotFound => return Err(FilesError::ObjectNotFound(from.to_string())),
                Err(e) => return Err(e.into()),
            }
            fs::remove_file(&src)?;
        }
        self.prune(bucket, &src);
        self.describe(bucket, to, &dest)
    }

    fn delete(&self, bucket: &str, key: &str) -> FilesResult<()> {
        let path = self.object_path(bucket, key);
        match fs::remove_file(&path) {
            Ok(()) => {
                self.prune(bucket, &path);
                Ok(())
            }
            Err(e) if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::IsADirectory) => {
                Err(FilesError::ObjectNotFound(key.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn sign(&self, bucket: &str, key: &str, method: LinkMethod, expires_at: Timestamp) -> FilesResult<String> {
        let token = self.signer.issue(bucket, key, method, expires_at);
        Ok(format!("{}/storage/signed/{token}", self.base_url))
    }

    fn redeem(&self, token: &str, method: LinkMethod, now: Timestamp) -> FilesResult<(String, String)> {
        self.signer.verify(token, method, now)
    }

    fn download_to(&self, bucket: &str, key: &str, dest: &Path) -> FilesResult<()> {
        match fs::copy(self.object_path(bucket, key), dest) {
            Ok(_) => Ok(()),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(FilesError::ObjectNotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    fn upload_from(&self, bucket: &str, key: &str, src: &Path) -> FilesResult<StoredObject> {
        let tmp = self.temp_path();
        fs::copy(src, &tmp)?;
        let dest = self.object_path(bucket, key);
        self.place(&tmp, &dest)?;
        self.describe(bucket, key, &dest)
    }
}
