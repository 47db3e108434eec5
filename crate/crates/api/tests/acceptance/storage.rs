use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use schema_api::client::Client;
use schema_api::files::{bucket_for, sha256_checksum, StoredObject};
use schema_api::services::Services;
use serde_json::Value;

use crate::common::{Harness, ALICE, BOB};
use crate::{ensure, Outcome};

const MAX_PAYLOAD: usize = 10 * 1024 * 1024;

/// Everything in a user's bucket, with contents.
fn bucket_state(svc: &Services, user: &str) -> Vec<(String, Vec<u8>)> {
    svc.files
        .list_objects(user, None)
        .expect("list")
        .into_iter()
        .map(|o| {
            let data = svc.files.get_object(user, &o.key).expect("read");
            (o.key, data)
        })
        .collect()
}

/// Key spellings that try to reach `victim`'s bucket.
fn attack_keys(victim: &str) -> Vec<String> {
    let vb = bucket_for(victim);
    vec![
        "secret.txt".into(),
        format!("{vb}/secret.txt"),
        format!("../{vb}/secret.txt"),
        format!("../{vb}/f_secret.txt"),
        format!("/{vb}/secret.txt"),
        format!("%2e%2e/{vb}/secret.txt"),
        "../secret.txt".into(),
        "./secret.txt".into(),
        format!("{vb}/../secret.txt"),
    ]
}

/// What an attempt handed back to the actor.
enum Seen {
    Bytes(Vec<u8>),
    Object(StoredObject),
    Link(String),
    /// A request that must have been refused was served.
    Served(&'static str),
}

/// Bucket named by a signed link's claim.
fn link_bucket(url: &str) -> Option<String> {
    let token = url.rsplit_once('/')?.1;
    let payload = token.split_once('.')?.0;
    let claim: Value = serde_json::from_slice(&URL_SAFE_NO_PAD.decode(payload).ok()?).ok()?;
    claim["b"].as_str().map(str::to_string)
}

struct Matrix<'a> {
    svc: &'a Services,
    attempts: usize,
    breaches: Vec<String>,
}

impl Matrix<'_> {
    /// Runs one attempt and flags it if the victim's bucket changed, or the
    /// actor was handed the victim's bytes, an object outside its own
    /// bucket, or a link into another bucket.
    fn attempt(&mut self, label: String, actor: &str, victim: &str, secret: &[u8], f: impl FnOnce() -> Vec<Seen>) {
        self.attempts += 1;
        let before = bucket_state(self.svc, victim);
        let observed = f();
        let after = bucket_state(self.svc, victim);
        if before != after {
            self.breaches.push(format!("{label}: {actor} modified {victim}'s bucket"));
        }
        let own = bucket_for(actor);
        for seen in observed {
            let breach = match &seen {
                Seen::Bytes(b) => b.windows(secret.len()).any(|w| w == secret),
                Seen::Object(o) => o.bucket != own,
                Seen::Link(url) => link_bucket(url).as_deref() != Some(own.as_str()),
                Seen::Served(_) => true,
            };
            if breach {
                let what = match seen {
                    Seen::Bytes(_) => "the victim's bytes".to_string(),
                    Seen::Object(o) => format!("object in {}", o.bucket),
                    Seen::Link(url) => format!("link {url}"),
                    Seen::Served(what) => what.to_string(),
                };
                self.breaches.push(format!("{label}: {actor} received {what}"));
            }
        }
    }
}

/// A download token for one of the actor's objects, rewritten to name the victim's bucket.
fn forged_url(url: &str, victim_bucket: &str) -> Option<String> {
    let (base, token) = url.rsplit_once('/')?;
    let (payload, sig) = token.split_once('.')?;
    let mut claim: Value = serde_json::from_slice(&URL_SAFE_NO_PAD.decode(payload).ok()?).ok()?;
    claim["b"] = Value::String(victim_bucket.to_string());
    claim["k"] = Value::String("secret.txt".into());
    let forged = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&claim).ok()?);
    Some(format!("{base}/{forged}.{sig}"))
}

fn isolation(h: &Harness) -> Result<(usize, usize), String> {
    let svc = h.services();
    let mut rng = StdRng::seed_from_u64(7);
    let mut secrets = std::collections::HashMap::new();
    for user in ["alice", "bob"] {
        let mut secret = vec![0u8; 64];
        rng.fill_bytes(&mut secret);
        svc.files.put_object(user, "secret.txt", &secret).map_err(|e| e.to_string())?;
        svc.files.put_object(user, "private/data.bin", &secret).map_err(|e| e.to_string())?;
        svc.files.put_object(user, &format!("{user}-own.txt"), b"own").map_err(|e| e.to_string())?;
        secrets.insert(user, secret);
    }
    let agent = ureq::agent();
    let mut m = Matrix {
        svc,
        attempts: 0,
        breaches: Vec::new(),
    };
    let mut ops_seen = std::collections::BTreeSet::new();
    for (actor, token, victim) in [("alice", ALICE, "bob"), ("bob", BOB, "alice")] {
        let c = Client::new(h.url(), token);
        let secret = secrets[victim].clone();
        let own = format!("{actor}-own.txt");
        let vb = bucket_for(victim);

        // list
        ops_seen.insert("list");
        for prefix in [None, Some("private/"), Some(vb.as_str()), Some("../"), Some("")] {
            m.attempt(format!("list {prefix:?}"), actor, victim, &secret, || {
                let page = c.list_files(prefix).map(|p| p.items).unwrap_or_default();
                let mut seen = Vec::new();
                for o in page {
                    seen.push(Seen::Bytes(c.download(&o.key).unwrap_or_default()));
                    seen.push(Seen::Object(o));
                }
                seen
            });
        }
        for key in attack_keys(victim) {
            // download
            ops_seen.insert("download");
            m.attempt(format!("download {key}"), actor, victim, &secret, || {
                let mut seen = Vec::new();
                if let Ok(l) = c.download_link(&key) {
                    seen.push(Seen::Link(l.link.url));
                    seen.extend(l.object.map(Seen::Object));
                }
                seen.push(Seen::Bytes(c.download(&key).unwrap_or_default()));
                seen
            });
            // upload
            ops_seen.insert("upload");
            m.attempt(format!("upload {key}"), actor, victim, &secret, || {
                let _ = c.upload(&key, b"overwritten by attacker");
                c.upload_link(&key).map(|l| Seen::Link(l.link.url)).into_iter().collect()
            });
            // move both ways
            ops_seen.insert("move");
            m.attempt(format!("move {key} -> own"), actor, victim, &secret, || {
                let stolen = format!("{actor}-stolen.txt");
                let mut seen: Vec<Seen> = c.move_file(&key, &stolen, true).map(Seen::Object).into_iter().collect();
                seen.push(Seen::Bytes(c.download(&stolen).unwrap_or_default()));
                seen
            });
            m.attempt(format!("move own -> {key}"), actor, victim, &secret, || {
                let _ = c.upload(&own, b"own");
                c.move_file(&own, &key, true).map(Seen::Object).into_iter().collect()
            });
            // delete
            ops_seen.insert("delete");
            m.attempt(format!("delete {key}"), actor, victim, &secret, || {
                let _ = c.delete_file(&key);
                vec![]
            });
        }
        // forged link
        let _ = c.upload(&own, b"own");
        let link = c.download_link(&own).map_err(|e| e.to_string())?.link.url;
        let forged = forged_url(&link, &vb).ok_or("could not forge token")?;
        m.attempt("forged download link".into(), actor, victim, &secret, || {
            match agent.get(&forged).call() {
                Ok(r) => {
                    let mut buf = Vec::new();
                    let _ = std::io::Read::read_to_end(&mut r.into_reader(), &mut buf);
                    vec![Seen::Bytes(buf), Seen::Served("a download through a forged link")]
                }
                Err(_) => vec![],
            }
        });
        let forged_put = forged.clone();
        m.attempt("forged upload link".into(), actor, victim, &secret, || {
            match agent.put(&forged_put).send_bytes(b"x") {
                Ok(_) => vec![Seen::Served("an upload through a forged link")],
                Err(_) => vec![],
            }
        });
    }
    ensure!(ops_seen.len() == 5, "matrix covered {ops_seen:?}");
    ensure!(m.breaches.is_empty(), "{} cross accesses: {:?}", m.breaches.len(), m.breaches);
    Ok((m.attempts, ops_seen.len()))
}

fn round_trips(h: &Harness) -> Result<(usize, usize), String> {
    let c = Client::new(h.url(), ALICE);
    let mut rng = StdRng::seed_from_u64(11);
    let mut sizes = vec![0, 1, 17, 4096, 65_537, 1 << 20, MAX_PAYLOAD];
    sizes.extend((0..4).map(|_| rng.gen_range(0..=MAX_PAYLOAD)));
    for (i, &n) in sizes.iter().enumerate() {
        let mut data = vec![0u8; n];
        rng.fill_bytes(&mut data);
        let key = format!("roundtrip/{i}.bin");
        c.upload(&key, &data).map_err(|e| format!("upload {n} bytes: {e}"))?;
        let back = c.download(&key).map_err(|e| format!("download {n} bytes: {e}"))?;
        ensure!(back == data, "{n}-byte payload changed in transit ({} bytes back)", back.len());
        let meta = c.download_link(&key).map_err(|e| e.to_string())?.object.ok_or("no metadata")?;
        ensure!(meta.size_bytes == n as u64, "size {} != {n}", meta.size_bytes);
        ensure!(meta.checksum == sha256_checksum(&data), "checksum mismatch for {n} bytes");
    }
    Ok((sizes.len(), *sizes.iter().max().unwrap()))
}

pub fn isolation_and_round_trip() -> Outcome {
    let h = Harness::start();
    let (attempts, ops) = isolation(&h)?;
    let (payloads, largest) = round_trips(&h)?;
    Ok(format!(
        "{ops} ops x 2 users, {attempts} adversarial attempts, 0 cross accesses; {payloads} payloads up to {largest} bytes byte-identical"
    ))
}
