use std::io::Read;
use std::time::Duration;

use schema_api::rest::ErrorEnvelope;
use schema_api::services::Services;
use schema_core::{ExecutionKind, Quota};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::common::{diamond_workflow, echo_task, sleep_task, wait_terminal, Harness, ALICE, BOB, CAROL, DORMANT};
use crate::{ensure, Outcome};

enum Body {
    None,
    Json(Value),
    Raw(&'static str),
}

/// Checks each response against its expected status and the error envelope
/// shape, and confirms GETs leave the store and buckets untouched.
struct Contract<'a> {
    base: String,
    svc: &'a Services,
    agent: ureq::Agent,
    checked: usize,
    gets_compared: usize,
    violations: Vec<String>,
}

type Observed = (
    schema_api::store::Snapshot,
    Vec<schema_api::files::StoredObject>,
    Vec<schema_api::files::StoredObject>,
);

impl Contract<'_> {
    fn observe(&self) -> Observed {
        let objs = |u: &str| self.svc.files.list_objects(u, None).expect("list objects");
        (self.svc.db.snapshot().expect("snapshot"), objs("alice"), objs("bob"))
    }

    fn send(&self, method: &str, url: &str, token: Option<&str>, body: &Body) -> (u16, Vec<u8>) {
        let mut req = self.agent.request(method, url);
        if let Some(t) = token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = match body {
            Body::None => req.call(),
            Body::Json(v) => req.send_json(v),
            Body::Raw(s) => req.set("Content-Type", "application/json").send_string(s),
        };
        let resp = match resp {
            Ok(r) | Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return (0, e.to_string().into_bytes()),
        };
        let status = resp.status();
        let mut buf = Vec::new();
        let _ = resp.into_reader().read_to_end(&mut buf);
        (status, buf)
    }

    fn check(&mut self, method: &str, path: &str, token: Option<&str>, body: Body, want: u16) -> Value {
        let url = if path.starts_with("http") { path.to_string() } else { format!("{}{path}", self.base) };
        let label = format!("{method} {path} as {}", token.unwrap_or("anonymous"));
        let before = (method == "GET").then(|| self.observe());
        let (status, bytes) = self.send(method, &url, token, &body);
        self.checked += 1;
        if let Some(before) = before {
            self.gets_compared += 1;
            if self.observe() != before {
                self.violations.push(format!("{label} mutated state"));
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        if status != want {
            self.violations.push(format!("{label}: {status} (want {want}) {text}"));
        }
        if !(200..300).contains(&status) {
            match serde_json::from_slice::<ErrorEnvelope>(&bytes) {
                Ok(env) if env.status_code == status && !env.code.is_empty() && !env.message.is_empty() => {}
                Ok(env) => self.violations.push(format!("{label}: inconsistent envelope {env:?}")),
                Err(_) => self.violations.push(format!("{label}: {status} body is not an envelope: {text}")),
            }
        }
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    }
}

fn uuid_of(v: &Value) -> Result<Uuid, String> {
    v["uuid"].as_str().and_then(|s| s.parse().ok()).ok_or_else(|| format!("no uuid in {v}"))
}

pub fn endpoint_contract() -> Outcome {
    let h = Harness::start();
    let svc = h.services();
    let mut c = Contract {
        base: h.url(),
        svc,
        agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        checked: 0,
        gets_compared: 0,
        violations: Vec::new(),
    };
    let a = Some(ALICE);

    // mutations that set up state
    let t1 = uuid_of(&c.check("POST", "/api/tasks", a, Body::Json(echo_task("contract").to_json()), 201))?;
    let t2 = uuid_of(&c.check("POST", "/api/tasks", a, Body::Json(sleep_task(30).to_json()), 201))?;
    let out = c.check("POST", &format!("/api/tasks/{t2}/cancel"), a, Body::None, 200);
    ensure!(out["already_terminal"] == json!(false), "first cancel reported {out}");
    let w1 = uuid_of(&c.check("POST", "/api/workflows", a, Body::Json(diamond_workflow()), 201))?;
    let client = h.client(ALICE);
    wait_terminal(&client, ExecutionKind::Task, t1, Duration::from_secs(10));
    wait_terminal(&client, ExecutionKind::Task, t2, Duration::from_secs(10));
    wait_terminal(&client, ExecutionKind::Workflow, w1, Duration::from_secs(30));
    let out = c.check("POST", &format!("/api/tasks/{t1}/cancel"), a, Body::None, 200);
    ensure!(out["already_terminal"] == json!(true), "cancel of a finished task reported {out}");

    let exp = "/reproducibility/experiments/alice/contract";
    c.check(
        "POST",
        "/reproducibility/experiments",
        a,
        Body::Json(json!({"name": "contract", "participants": ["bob"]})),
        201,
    );
    c.check("PUT", &format!("{exp}/tasks"), a, Body::Json(json!({ "tasks": [t1] })), 200);
    c.check("PUT", &format!("{exp}/tasks"), a, Body::Json(json!([t1])), 200);
    c.check("PATCH", exp, a, Body::Json(json!({"description": "contract run"})), 200);
    let link = c.check("POST", "/storage/files", a, Body::Json(json!({"key": "c/a.txt"})), 201);
    let put_url = link["link"]["url"].as_str().ok_or("no upload url")?.to_string();
    c.check("PUT", &put_url, None, Body::Raw("contract bytes"), 200);
    c.check("PATCH", "/storage/files/c/a.txt", a, Body::Json(json!({"to": "c/b.txt"})), 200);
    let link = c.check("POST", "/storage/files", a, Body::Json(json!({"key": "c/c.txt"})), 201);
    let put_url = link["link"]["url"].as_str().ok_or("no upload url")?.to_string();
    c.check("PUT", &put_url, None, Body::Raw("other"), 200);

    // reads, all compared against a before/after snapshot
    for path in [
        "/api/tasks".to_string(),
        "/api/tasks?status=COMPLETED".into(),
        "/api/tasks?page=1&page_size=1".into(),
        format!("/api/tasks/{t1}"),
        format!("/api/tasks/{t1}/stderr"),
        "/api/workflows".into(),
        format!("/api/workflows/{w1}"),
        format!("/api/workflows/{w1}/stdout"),
        format!("/api/workflows/{w1}/stderr"),
        "/api/quotas".into(),
        "/reproducibility/experiments".into(),
        exp.to_string(),
        format!("{exp}/tasks"),
        "/storage/files".into(),
        "/storage/files?prefix=c/".into(),
    ] {
        c.check("GET", &path, a, Body::None, 200);
    }
    let stdout = c.check("GET", &format!("/api/tasks/{t1}/stdout"), a, Body::None, 200);
    ensure!(stdout == json!(["contract\n"]), "stdout {stdout}");
    c.check("GET", exp, Some(BOB), Body::None, 200);
    c.check("GET", &format!("/api/tasks/{t1}"), Some(BOB), Body::None, 200);
    let dl = c.check("GET", "/storage/files/c/b.txt", a, Body::None, 200);
    let get_url = dl["link"]["url"].as_str().ok_or("no download url")?.to_string();
    let (status, bytes) = c.send("GET", &get_url, None, &Body::None);
    ensure!(status == 200 && bytes == b"contract bytes", "signed download gave {status}");
    c.check("GET", &get_url, None, Body::None, 200);

    // rejected reads
    let ghost = Uuid::new_v4();
    for (path, token, want) in [
        (format!("/api/tasks/{ghost}"), a, 404),
        ("/api/tasks/not-a-uuid".into(), a, 404),
        (format!("/api/tasks/{w1}"), a, 404),
        (format!("/api/workflows/{t1}/stdout"), a, 404),
        (format!("/api/tasks/{t1}"), Some(CAROL), 403),
        (format!("/api/tasks/{t1}/stdout"), Some(CAROL), 403),
        ("/api/tasks?status=BOGUS".into(), a, 400),
        ("/api/tasks?page=0".into(), a, 400),
        ("/api/tasks?page_size=0".into(), a, 400),
        ("/api/tasks".into(), None, 401),
        ("/api/tasks".into(), Some(DORMANT), 401),
        ("/api/quotas".into(), Some("garbage"), 401),
        ("/storage/files".into(), None, 401),
        ("/no/such/route".into(), a, 404),
        (exp.to_string(), Some(CAROL), 403),
        ("/reproducibility/experiments/alice/ghost".into(), a, 404),
        ("/storage/files/missing.txt".into(), a, 404),
        ("/storage/signed/garbage".into(), None, 403),
    ] {
        c.check("GET", &path, token, Body::None, want);
    }

    // rejected mutations
    c.check("DELETE", "/api/quotas", a, Body::None, 405);
    c.check("PUT", "/api/tasks", a, Body::Json(json!({})), 405);
    c.check("POST", "/api/tasks", None, Body::Json(echo_task("x").to_json()), 401);
    c.check("POST", "/api/tasks", a, Body::Raw("not json"), 400);
    let v = c.check("POST", "/api/tasks", a, Body::Json(json!({"executors": []})), 400);
    ensure!(v["details"].as_array().is_some_and(|d| !d.is_empty()), "validation error without details: {v}");
    let cyclic = json!({
        "executors": [
            {"id": "A", "image": "alpine", "command": ["true"], "reads": ["/vol/b"], "writes": ["/vol/a"]},
            {"id": "B", "image": "alpine", "command": ["true"], "reads": ["/vol/a"], "writes": ["/vol/b"]}
        ],
        "volumes": ["/vol"]
    });
    c.check("POST", "/api/workflows", a, Body::Json(cyclic), 400);
    c.check("POST", &format!("/api/tasks/{ghost}/cancel"), a, Body::None, 404);
    svc.quotas
        .set_user_quota("bob", Quota { max_cpu_cores: Some(0), ..Quota::default() })
        .map_err(|e| e.to_string())?;
    let v = c.check("POST", "/api/tasks", Some(BOB), Body::Json(echo_task("x").to_json()), 429);
    ensure!(v["details"][0]["dimension"].is_string(), "quota error without dimension: {v}");
    c.check(
        "POST",
        "/reproducibility/experiments",
        a,
        Body::Json(json!({"name": "contract"})),
        409,
    );
    c.check("POST", "/reproducibility/experiments", a, Body::Json(json!({"name": ".."})), 400);
    c.check(
        "POST",
        "/reproducibility/experiments",
        a,
        Body::Json(json!({"name": "x", "participants": ["carol"]})),
        400,
    );
    c.check("PUT", &format!("{exp}/tasks"), a, Body::Json(json!([t2])), 409);
    c.check("PUT", &format!("{exp}/tasks"), a, Body::Json(json!([ghost])), 404);
    c.check("PATCH", exp, Some(BOB), Body::Json(json!({"description": "mine"})), 403);
    c.check("DELETE", exp, Some(BOB), Body::None, 403);
    c.check("POST", "/storage/files", a, Body::Json(json!({"key": "../x"})), 400);
    c.check("PATCH", "/storage/files/c/b.txt", a, Body::Json(json!({"to": "c/c.txt", "overwrite": false})), 409);
    c.check("PUT", &format!("{}/storage/signed/garbage", c.base), None, Body::Raw("x"), 403);
    c.check("DELETE", "/storage/files/c/b.txt", a, Body::None, 200);
    c.check("DELETE", "/storage/files/c/b.txt", a, Body::None, 404);
    c.check("DELETE", exp, a, Body::None, 200);
    c.check("DELETE", exp, a, Body::None, 404);

    crate::collect_histories("endpoint-contract", svc);
    ensure!(c.violations.is_empty(), "{} violations: {:#?}", c.violations.len(), c.violations);
    Ok(format!(
        "{} requests per contract, {} GETs mutation-free, every non-2xx an envelope",
        c.checked, c.gets_compared
    ))
}

mod erased {
    pub trait ToJson {
        fn to_json(&self) -> serde_json::Value;
    }

    impl<T: serde::Serialize> ToJson for T {
        fn to_json(&self) -> serde_json::Value {
            serde_json::to_value(self).expect("serializable")
        }
    }
}
use erased::ToJson;
