//! S3-compatible object store driver. Every request, including the service's
//! own, goes through a SigV4 query-presigned URL; links handed to users are
//! the same URLs with a longer expiry.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use hmac::{Hmac, Mac};
use parking_lot::Mutex;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{FilesError, FilesResult, LinkMethod, StorageDriver, StoredObject};
use schema_core::Timestamp;

type HmacSha256 = Hmac<Sha256>;

/// Everything except the RFC 3986 unreserved set.
const SIGV4: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

fn uri_encode(s: &str) -> String {
    utf8_percent_encode(s, SIGV4).to_string()
}

fn hmac(key: &[u8], data: &[u8]) -> Vec<u8> {
    let mut m = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    m.update(data);
    m.finalize().into_bytes().to_vec()
}

pub struct PresignRequest<'a> {
    pub method: &'a str,
    /// `host[:port]` exactly as sent in the Host header.
    pub host: &'a str,
    /// Unencoded absolute path, e.g. `/bucket/dir/key`.
    pub path: &'a str,
    pub query: &'a [(String, String)],
    /// Additional signed headers, lowercase names.
    pub headers: &'a [(String, String)],
    pub region: &'a str,
    pub access_key: &'a str,
    pub secret_key: &'a str,
    pub now: Timestamp,
    pub expires_secs: i64,
}

/// Returns the signed query string (without a leading `?`).
pub fn presign_v4(r: &PresignRequest<'_>) -> String {
    let amz_date = r.now.format("%Y%m%dT%H%M%SZ").to_string();
    let date = r.now.format("%Y%m%d").to_string();
    let scope = format!("{date}/{}/s3/aws4_request", r.region);

    let mut headers: BTreeMap<String, String> = BTreeMap::new();
    headers.insert("host".into(), r.host.to_string());
    for (k, v) in r.headers {
        headers.insert(k.to_ascii_lowercase(), v.trim().to_string());
    }
    let signed_headers = headers.keys().cloned().collect::<Vec<_>>().join(";");

    let mut params: Vec<(String, String)> = r.query.to_vec();
    params.push(("X-Amz-Algorithm".into(), "AWS4-HMAC-SHA256".into()));
    params.push(("X-Amz-Credential".into(), format!("{}/{scope}", r.access_key)));
    params.push(("X-Amz-Date".into(), amz_date.clone()));
    params.push(("X-Amz-Expires".into(), r.expires_secs.to_string()));
    params.push(("X-Amz-SignedHeaders".into(), signed_headers.clone()));
    let mut encoded: Vec<(String, String)> = params.iter().map(|(k, v)| (uri_encode(k), uri_encode(v))).collect();
    encoded.sort();
    let query = encoded
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("&");

    let canonical_uri = r.path.split('/').map(uri_encode).collect::<Vec<_>>().join("/");
    let canonical_headers: String = headers.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
    let canonical_request =
        format!("{}\n{canonical_uri}\n{query}\n{canonical_headers}\n{signed_headers}\nUNSIGNED-PAYLOAD", r.method);
    let string_to_sign = format!(
        "AWS4-HMAC-SHA256\n{amz_date}\n{scope}\n{}",
        hex::encode(Sha256::digest(canonical_request.as_bytes()))
    );

    let k_date = hmac(format!("AWS4{}", r.secret_key).as_bytes(), date.as_bytes());
    let k_region = hmac(&k_date, r.region.as_bytes());
    let k_service = hmac(&k_region, b"s3");
    let k_signing = hmac(&k_service, b"aws4_request");
    let signature = hex::encode(hmac(&k_signing, string_to_sign.as_bytes()));
    format!("{query}&X-Amz-Signature={signature}")
}

#[derive(Clone, Debug)]
pub struct S3Config {
    /// Scheme and authority, e.g. `http://127.0.0.1:9000`. Path-style addressing.
    pub endpoint: String,
    pub region: String,
    pub access_key: String,
    pub secret_key: String,
}

pub struct S3Driver {
    cfg: S3Config,
    host: String,
    agent: ureq::Agent,
    known_buckets: Mutex<BTreeSet<String>>,
}

const REQUEST_EXPIRY_SECS: i64 = 300;

#[derive(Deserialize)]
#[serde(rename_all = "PascalCase")]
struct ListBucketResult {
    #[serde(default)]
    contents: Vec<ListEntry>,
    #[serde(default)]
    is_truncated: bool,
    #[serde(default)]
    next_continuation_token: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "PascalCase")]
struct ListEntry {
    key: String,
    last_modified: String,
    #[serde(default)]
    e_tag: String,
    size: u64,
}

fn etag_checksum(etag: &str) -> String {
    format!("etag:{}", etag.trim_matches('"'))
}

fn remote(e: ureq::Error) -> FilesError {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            FilesError::Remote(format!("status {code}: {}", body.trim()))
        }
        ureq::Error::Transport(t) => FilesError::Remote(t.to_string()),
    }
}

impl S3Driver {
    pub fn new(cfg: S3Config) -> FilesResult<Self> {
        let rest = cfg
            .endpoint
            .split_once("://")
            .map(|(_, r)| r)
            .ok_or_else(|| FilesError::Remote(format!("endpoint {} lacks a scheme", cfg.endpoint)))?;
        let host = rest.split('/').next().unwrap_or_default().to_string();
        Ok(S3Driver {
            agent: ureq::AgentBuilder::new().timeout(StdDuration::from_secs(60)).build(),
            cfg: S3Config {
                endpoint: cfg.endpoint.trim_end_matches('/').to_string(),
                ..cfg
            },
            host,
            known_buckets: Mutex::new(BTreeSet::new()),
        })
    }

    fn url(
        &self,
        method: &str,
        path: &str,
        query: &[(String, String)],
        headers: &[(String, String)],
        expires_secs: i64,
        now: Timestamp,
    ) -> String {
        let q = presign_v4(&PresignRequest {
            method,
            host: &self.host,
            path,
            query,
            headers,
            region: &self.cfg.region,
            access_key: &self.cfg.access_key,
            secret_key: &self.cfg.secret_key,
            now,
            expires_secs,
        });
        let encoded_path = path.split('/').map(uri_encode).collect::<Vec<_>>().join("/");
        format!("{}{encoded_path}?{q}", self.cfg.endpoint)
    }

    fn object_url(&self, method: &str, bucket: &str, key: &str, headers: &[(String, String)]) -> String {
        self.url(method, &format!("/{bucket}/{key}"), &[], headers, REQUEST_EXPIRY_SECS, Utc::now())
    }

    fn ensure_bucket(&self, bucket: &str) -> FilesResult<()> {
        if self.known_buckets.lock().contains(bucket) {
            return Ok(());
        }
        let url = self.url("PUT", &format!("/{bucket}"), &[], &[], REQUEST_EXPIRY_SECS, Utc::now());
        match self.agent.put(&url).call() {
            Ok(_) | Err(ureq::Error::Status(409, _)) => {}
            Err(e) => return Err(remote(e)),
        }
        self.known_buckets.lock().insert(bucket.to_string());
        Ok(())
    }

    fn head(&self, bucket: &str, key: &str) -> FilesResult<Option<StoredObject>> {
        match self.agent.head(&self.object_url("HEAD", bucket, key, &[])).call() {
            Ok(resp) => {
                let size_bytes = resp
                    .header("content-length")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0);
                let modified_at = resp
                    .header("last-modified")
                    .and_then(|v| DateTime::parse_from_rfc2822(v).ok())
                    .map(|d| d.with_timezone(&Utc))
                    .unwrap_or_else(Utc::now);
                Ok(Some(StoredObject {
                    bucket: bucket.to_string(),
                    key: key.to_string(),
                    size_bytes,
                    modified_at,
                    checksum: etag_checksum(resp.header("etag").unwrap_or_default()),
                }))
            }
            Err(ureq::Error::Status(404, _)) => Ok(None),
            Err(e) => Err(remote(e)),
        }
    }
}

impl StorageDriver for S3Driver {
    fn list(&self, bucket: &str, prefix: &str) -> FilesResult<Vec<StoredObject>> {
        let mut out = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut query = vec![
                ("list-type".to_string(), "2".to_string()),
                ("prefix".to_string(), prefix.to_string()),
            ];
            if let Some(t) = &token {
                query.push(("continuation-token".to_string(), t.clone()));
            }
            let url = self.url("GET", &format!("/{bucket}"), &query, &[], REQUEST_EXPIRY_SECS, Utc::now());
            let body = match self.agent.get(&url).call() {
                Ok(r) => r.into_string()?,
                Err(ureq::Error::Status(404, _)) => return Ok(Vec::new()),
                Err(e) => return Err(remote(e)),
            };
            let page: ListBucketResult =
                quick_xml::de::from_str(&body).map_err(|e| FilesError::Remote(format!("list response: {e}")))?;
            for e in page.contents {
                out.push(StoredObject {
                    bucket: bucket.to_string(),
                    modified_at: DateTime::parse_from_rfc3339(&e.last_modified)
                        .map(|d| d.with_timezone(&Utc))
                        .unwrap_or_else(|_| Utc::now()),
                    checksum: etag_checksum(&e.e_tag),
                    key: e.key,
                    size_bytes: e.size,
                });
            }
            match (page.is_truncated, page.next_continuation_token) {
                (true, Some(t)) => token = Some(t),
                _ => break,
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    fn stat(&self, bucket: &str, key: &str) -> FilesResult<StoredObject> {
        self.head(bucket, key)?
            .ok_or_else(|| FilesError::ObjectNotFound(key.to_string()))
    }

    fn read(&self, bucket: &str, key: &str) -> FilesResult<Vec<u8>> {
        match self.agent.get(&self.object_url("GET", bucket, key, &[])).call() {
            Ok(resp) => {
                let mut buf = Vec::new();
                resp.into_reader().read_to_end(&mut buf)?;
                Ok(buf)
            }
            Err(ureq::Error::Status(404, _)) => Err(FilesError::ObjectNotFound(key.to_string())),
            Err(e) => Err(remote(e)),
        }
    }

    fn write(&self, bucket: &str, key: &str, data: &[u8]) -> FilesResult<StoredObject> {
        self.ensure_bucket(bucket)?;
        self.agent
            .put(&self.object_url("PUT", bucket, key, &[]))
            .send_bytes(data)
            .map_err(remote)?;
        self.stat(bucket, key)
    }

    fn rename(&self, bucket: &str, from: &str, to: &str, overwrite: bool) -> FilesResult<StoredObject> {
        if self.head(bucket, from)?.is_none() {
            return Err(FilesError::ObjectNotFound(from.to_string()));
        }
        if from == to {
            return self.stat(bucket, to);
        }
        // S3 has no conditional copy; the existence check and the copy race.
        if !overwrite && self.head(bucket, to)?.is_some() {
            return Err(FilesError::DestinationExists(to.to_string()));
        }
        let source = format!("/{bucket}/{}", from.split('/').map(uri_encode).collect::<Vec<_>>().join("/"));
        let headers = [("x-amz-copy-source".to_string(), source.clone())];
        self.agent
            .put(&self.object_url("PUT", bucket, to, &headers))
            .set("x-amz-copy-source", &source)
            .call()
            .map_err(remote)?;
        self.agent
            .delete(&self.object_url("DELETE", bucket, from, &[]))
            .call()
            .map_err(remote)?;
        self.stat(bucket, to)
    }

    fn delete(&self, bucket: &str, key: &str) -> FilesResult<()> {
        if self.head(bucket, key)?.is_none() {
            return Err(FilesError::ObjectNotFound(key.to_string()));
        }
        self.agent
            .delete(&self.object_url("DELETE", bucket, key, &[]))
            .call()
            .map_err(remote)?;
        Ok(())
    }

    fn sign(&self, bucket: &str, key: &str, method: LinkMethod, expires_at: Timestamp) -> FilesResult<String> {
        let verb = match method {
            LinkMethod::Upload => {
                self.ensure_bucket(bucket)?;
                "PUT"
            }
            LinkMethod::Download => "GET",
        };
        let now = Utc::now();
        let secs = (expires_at - now).num_seconds().clamp(1, Duration::days(7).num_seconds());
        Ok(self.url(verb, &format!("/{bucket}/{key}"), &[], &[], secs, now))
    }
}
