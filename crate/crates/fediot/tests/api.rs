use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fediot::api::{self, SharedWorld, ACTOR_HEADER};
use fediot_core::core5g::{DomainId, Imsi};
use fediot_core::scenario::{self, Action, World};
use fediot_core::sdn::Fault;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const MANAGER: &str = "001010000000001";
const CUSTOMER: &str = "001010000000004";
const SUSPENDED: &str = "001010000000005";
const VISITOR: &str = "001010000000008";

fn shed_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/shed.json")
}

fn shed_value() -> Value {
    serde_json::from_str(&std::fs::read_to_string(shed_path()).unwrap()).unwrap()
}

fn world_from(v: Value, until_ms: u64) -> SharedWorld {
    let base = shed_path().parent().unwrap().to_path_buf();
    let spec = scenario::load_str(&v.to_string(), Some(&base)).expect("scenario loads");
    let mut world = World::new(&spec).unwrap();
    world.run_until(until_ms);
    Arc::new(Mutex::new(world))
}

/// The reference scenario after the initial attaches and the first roam.
fn shed_world() -> SharedWorld {
    world_from(shed_value(), 200)
}

/// The reference scenario plus a visitor whose attach needs approval.
fn onboarding_world() -> SharedWorld {
    let mut v = shed_value();
    v["subscribers"].as_array_mut().unwrap().push(json!({
        "imsi": VISITOR, "home_domain": "private", "sim_profiles": ["private"],
        "roles": ["visitor"], "device_type": "handset", "posture": 1
    }));
    v["policy"]["role_slice_map"]["visitor"] = "guest".into();
    v["policy"]["rules"].as_array_mut().unwrap().push(json!({
        "rule_id": "attach-visitor", "priority": 10, "subject": { "roles": ["visitor"] },
        "action": "attach", "resource": "*", "effect": "manual", "scope": "local"
    }));
    let shared = world_from(v, 200);
    shared.lock().unwrap().submit(Action::Attach {
        imsi: Imsi::parse(VISITOR).unwrap(),
        domain: DomainId::new("private"),
        vpn_tunnel: false,
    });
    shared
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, actor: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(a) = actor {
        req = req.header(ACTOR_HEADER, a);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn events_since(app: &Router, since: u64) -> Vec<Value> {
    let (s, v) = call(app, "GET", &format!("/api/v1/events?since={since}"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    v["events"].as_array().unwrap().clone()
}

fn is_error(v: &Value, code: &str) -> bool {
    v["code"] == code && v["message"].as_str().is_some_and(|m| !m.is_empty())
}

#[tokio::test]
async fn sessions_list_active_entries_without_logging() {
    let world = shed_world();
    let app = api::router(Arc::clone(&world));
    let before = world.lock().unwrap().log().len();
    let (s, v) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(world.lock().unwrap().log().len(), before);
    let entries = v["entries"].as_array().unwrap();
    let manager: Vec<_> = entries.iter().filter(|e| e["imsi"] == MANAGER).collect();
    assert_eq!(manager.len(), 1);
    assert_eq!(manager[0]["domain"], "private");
    assert_eq!(manager[0]["slice_id"], "mgmt");
    assert!(entries.iter().all(|e| e["imsi"] != SUSPENDED));
    assert_eq!(v["as_of"], 200);
}

#[tokio::test]
async fn added_deny_rule_changes_the_next_decision_and_is_audited() {
    let app = api::router(shed_world());
    let query = json!({
        "session_id": 0, "imsi": CUSTOMER, "domain": "private",
        "requested_action": "access", "resource": "customer-portal"
    });
    let (s, v) = call(&app, "POST", "/api/v1/decisions", Some(query.clone()), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["effect"], "permit");

    let (_, pol) = call(&app, "GET", "/api/v1/policies", None, None).await;
    assert_eq!(pol["version"], 1);
    let seq = events_since(&app, 0).await.len() as u64;

    let rule = json!({
        "rule_id": "customers-out", "priority": 1, "subject": { "roles": ["customer"] },
        "action": "access", "resource": "customer-portal", "effect": "deny"
    });
    let (s, v) = call(&app, "POST", "/api/v1/policies/rules", Some(rule), Some("alice")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 2);

    let (_, v) = call(&app, "POST", "/api/v1/decisions", Some(query), None).await;
    assert_eq!(v["effect"], "deny");
    assert_eq!(v["matched_rule"], "customers-out");

    let fresh = events_since(&app, seq).await;
    let audits: Vec<_> = fresh.iter().filter(|e| e["event"] == "policy_updated").collect();
    assert_eq!(audits.len(), 1);
    assert_eq!(audits[0]["fields"]["actor"], "alice");
    assert_eq!(audits[0]["fields"]["version"], 2);
    for d in ["private", "public"] {
        assert!(
            fresh
                .iter()
                .any(|e| e["event"] == "push_applied" && e["fields"]["domain"] == d && e["fields"]["version"] == 2),
            "{d} applied v2 before the response"
        );
    }
}

#[tokio::test]
async fn policy_errors_map_to_documented_statuses() {
    let app = api::router(shed_world());
    let (s, v) = call(&app, "POST", "/api/v1/policies/rules", Some(json!({ "rule_id": 7 })), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(is_error(&v, "bad_request"), "{v}");

    let sauna = json!({
        "rule_id": "sauna-for-all", "priority": 30, "action": "access", "resource": "sauna", "effect": "permit"
    });
    let (s, v) = call(&app, "POST", "/api/v1/policies/rules", Some(sauna), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(is_error(&v, "malformed_policy"));
    assert!(v["message"].as_str().unwrap().contains("sauna-for-all"));

    let dup = json!({
        "rule_id": "iot-broker", "priority": 30, "action": "access", "resource": "mqtt-broker", "effect": "permit"
    });
    let (s, v) = call(&app, "POST", "/api/v1/policies/rules", Some(dup), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(is_error(&v, "duplicate_rule"));

    let (s, v) = call(&app, "DELETE", "/api/v1/policies/rules/nope", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(is_error(&v, "unknown_rule"));

    let (_, pol) = call(&app, "GET", "/api/v1/policies", None, None).await;
    assert_eq!(pol["version"], 1, "rejected mutations leave the version alone");

    let (s, v) = call(&app, "DELETE", "/api/v1/policies/rules/iot-broker", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 2);

    let (s, v) = call(&app, "GET", "/api/v1/nothing", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(is_error(&v, "not_found"));
}

#[tokio::test]
async fn put_replaces_the_policy_set_and_flags_stale_writers() {
    let app = api::router(shed_world());
    let (_, pol) = call(&app, "GET", "/api/v1/policies", None, None).await;
    let doc = json!({
        "rules": pol["rules"], "role_slice_map": pol["role_slice_map"], "service_catalog": pol["service_catalog"]
    });
    let (s, v) = call(&app, "PUT", "/api/v1/policies?base_version=1", Some(doc.clone()), Some("ops-a")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 2);
    let (s, v) = call(&app, "PUT", "/api/v1/policies?base_version=1", Some(doc), Some("ops-b")).await;
    assert_eq!(s, StatusCode::OK, "last writer wins");
    assert_eq!(v["version"], 3);
    let audits: Vec<_> = events_since(&app, 0)
        .await
        .into_iter()
        .filter(|e| e["event"] == "policy_updated" && e["fields"]["version"].as_u64() > Some(1))
        .collect();
    assert_eq!(audits.len(), 2);
    assert_eq!(audits[0]["fields"]["concurrent"], false);
    assert_eq!(audits[1]["fields"]["actor"], "ops-b");
    assert_eq!(audits[1]["fields"]["concurrent"], true);
}

#[tokio::test]
async fn approving_onboarding_yields_exactly_one_session() {
    let world = onboarding_world();
    let app = api::router(Arc::clone(&world));
    let (s, pending) = call(&app, "GET", "/api/v1/onboarding", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let pending = pending.as_array().unwrap();
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0]["imsi"], VISITOR);
    assert_eq!(pending[0]["matched_rule"], "attach-visitor");
    let sid = pending[0]["session_id"].as_u64().unwrap();

    let count = |v: &Value| {
        v["entries"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["imsi"] == VISITOR && e["state"] == "active")
            .count()
    };
    let (_, before) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    assert_eq!(count(&before), 0);

    let uri = format!("/api/v1/onboarding/{sid}/approve");
    let (s, v) = call(&app, "POST", &uri, None, Some("front-desk")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["admitted"], true);
    let (_, after) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    assert_eq!(count(&after), 1);
    let (_, pending) = call(&app, "GET", "/api/v1/onboarding", None, None).await;
    assert!(pending.as_array().unwrap().is_empty());

    let (s, v) = call(&app, "POST", &uri, None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(is_error(&v, "not_awaiting_approval"));

    let events = events_since(&app, 0).await;
    assert!(events.iter().any(|e| e["event"] == "attach_admitted" && e["fields"]["imsi"] == VISITOR));
    assert!(events
        .iter()
        .any(|e| e["event"] == "attach_decision" && e["fields"]["matched_rule"] == "manual:front-desk"));
}

#[tokio::test]
async fn denying_onboarding_logs_the_denial() {
    let world = onboarding_world();
    let app = api::router(Arc::clone(&world));
    let (_, pending) = call(&app, "GET", "/api/v1/onboarding", None, None).await;
    let sid = pending[0]["session_id"].as_u64().unwrap();
    let (s, v) = call(&app, "POST", &format!("/api/v1/onboarding/{sid}/deny"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["admitted"], false);
    let events = events_since(&app, 0).await;
    assert!(events.iter().any(|e| e["event"] == "attach_denied" && e["fields"]["imsi"] == VISITOR));
    let (_, sessions) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    assert!(sessions["entries"].as_array().unwrap().iter().all(|e| e["imsi"] != VISITOR));

    let (s, _) = call(&app, "POST", "/api/v1/onboarding/abc/approve", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &format!("/api/v1/onboarding/{sid}/maybe"), None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn roam_moves_the_session_and_rejects_bad_requests() {
    let world = shed_world();
    let app = api::router(Arc::clone(&world));
    let roam = |imsi: &str, to: &str| json!({ "imsi": imsi, "to_domain": to });

    let (s, v) = call(&app, "POST", "/api/v1/actions/roam", Some(roam(MANAGER, "private")), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(is_error(&v, "same_domain"));
    let (s, v) = call(&app, "POST", "/api/v1/actions/roam", Some(roam(SUSPENDED, "public")), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(is_error(&v, "no_active_session"));
    let (s, v) = call(&app, "POST", "/api/v1/actions/roam", Some(roam("001019999999999", "public")), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(is_error(&v, "unknown_imsi"));
    let (s, _) = call(&app, "POST", "/api/v1/actions/roam", Some(roam("12", "public")), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "POST", "/api/v1/actions/roam", Some(roam(MANAGER, "mars")), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(is_error(&v, "unknown_domain"));

    let (s, _) = call(&app, "POST", "/api/v1/actions/roam", Some(roam(MANAGER, "public")), None).await;
    assert_eq!(s, StatusCode::OK);
    world.lock().unwrap().run_until(400);
    let (_, v) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    let manager: Vec<_> = v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["imsi"] == MANAGER && e["state"] == "active")
        .collect();
    assert_eq!(manager.len(), 1);
    assert_eq!(manager[0]["domain"], "public");
    assert_eq!(manager[0]["service_session_id"], 1);
}

#[tokio::test]
async fn unreachable_domain_answers_503() {
    let world = shed_world();
    world.lock().unwrap().submit(Action::FaultInjection {
        domain: DomainId::new("public"),
        fault: Fault::Unreachable { duration_ms: 1000 },
    });
    let app = api::router(Arc::clone(&world));
    let (s, v) = call(&app, "POST", "/api/v1/actions/roam", Some(json!({ "imsi": MANAGER, "to_domain": "public" })), None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert!(is_error(&v, "domain_unreachable"));
    let query = json!({
        "session_id": 0, "imsi": "001010000000003", "domain": "public",
        "requested_action": "access", "resource": "customer-portal"
    });
    let (s, _) = call(&app, "POST", "/api/v1/decisions", Some(query), None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (_, sessions) = call(&app, "GET", "/api/v1/sessions", None, None).await;
    assert_eq!(sessions["unreachable"], json!(["public"]));
}

#[tokio::test]
async fn event_feed_pages_and_long_polls() {
    let world = shed_world();
    let app = api::router(Arc::clone(&world));
    let (s, v) = call(&app, "GET", "/api/v1/events", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let n = v["next"].as_u64().unwrap();
    assert_eq!(v["events"].as_array().unwrap().len() as u64, n);
    assert_eq!(v["events"][0]["event"], "device_commissioned");

    let (_, v) = call(&app, "GET", &format!("/api/v1/events?since={n}&wait_ms=30"), None, None).await;
    assert!(v["events"].as_array().unwrap().is_empty());
    assert_eq!(v["next"], n);

    let waiter = {
        let app = app.clone();
        tokio::spawn(async move { call(&app, "GET", &format!("/api/v1/events?since={n}&wait_ms=5000"), None, None).await })
    };
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    world.lock().unwrap().run_until(1000);
    let (s, v) = waiter.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    let fresh = v["events"].as_array().unwrap();
    assert!(!fresh.is_empty());
    assert!(fresh.iter().all(|e| e["ts"].as_u64().unwrap() > 200));

    let (s, v) = call(&app, "GET", "/api/v1/events?since=x", None, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
}
