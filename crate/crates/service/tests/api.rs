use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use wirecheck_core::synth::{generate, permute_defect, Defect, HarnessSpec};
use wirecheck_core::{OrientationSpec, TrainingConfig, ViewSpec};
use wirecheck_service::{router, AppState, ServiceConfig};

const TOKEN: &str = "s3cret-token";
const BOUNDARY: &str = "----wirecheck-test-boundary";

struct Harness {
    _dir: tempfile::TempDir,
    config: ServiceConfig,
    app: axum::Router,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = ServiceConfig {
            profiles_dir: dir.path().join("profiles"),
            sessions_db: dir.path().join("db"),
            token: TOKEN.into(),
        };
        let app = router(AppState::open(&config).unwrap());
        Self { _dir: dir, config, app }
    }

    fn restart(&mut self) {
        self.app = router(AppState::open(&self.config).unwrap());
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, body)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.send(authed(Request::get(uri)).body(Body::empty()).unwrap()).await
    }

    async fn post_json(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        let req = authed(Request::post(uri))
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        self.send(req).await
    }

    async fn post_multipart(&self, uri: &str, parts: &[(String, Option<String>, Vec<u8>)]) -> (StatusCode, Value) {
        let req = authed(Request::post(uri))
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart(parts)))
            .unwrap();
        self.send(req).await
    }
}

fn authed(b: axum::http::request::Builder) -> axum::http::request::Builder {
    b.header("authorization", format!("Bearer {TOKEN}"))
}

fn multipart(parts: &[(String, Option<String>, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, file, bytes) in parts {
        out.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"").bytes());
        if let Some(f) = file {
            out.extend(format!("; filename=\"{f}\"\r\nContent-Type: image/png").bytes());
        }
        out.extend(b"\r\n\r\n");
        out.extend(bytes);
        out.extend(b"\r\n");
    }
    out.extend(format!("--{BOUNDARY}--\r\n").bytes());
    out
}

fn png(spec: &HarnessSpec) -> Vec<u8> {
    generate(spec).unwrap().0.encode_png().unwrap()
}

fn training_parts(spec: &HarnessSpec, n: u64, id: &str) -> Vec<(String, Option<String>, Vec<u8>)> {
    let mut view = ViewSpec::new("front", spec.field, spec.wire_count());
    view.orientation = Some(OrientationSpec::distinct(spec.connector));
    let config = TrainingConfig { profile_id: id.into(), harness_type: "ht8".into(), views: vec![view] };
    let mut parts = vec![("config".to_string(), None, serde_json::to_vec(&config).unwrap())];
    for k in 0..n {
        parts.push(("view_0".into(), Some(format!("good{k}.png")), png(&spec.clone().with_seed(k + 1))));
    }
    parts
}

fn frame_part(spec: &HarnessSpec) -> Vec<(String, Option<String>, Vec<u8>)> {
    vec![("frame".into(), Some("f.png".into()), png(spec))]
}

#[tokio::test]
async fn auth_is_required_everywhere() {
    let h = Harness::new();
    for uri in ["/sessions", "/profiles", "/sessions/x"] {
        let (s, _) = h.send(Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::UNAUTHORIZED);
        let (s, _) = h
            .send(Request::get(uri).header("authorization", "Bearer nope").body(Body::empty()).unwrap())
            .await;
        assert_eq!(s, StatusCode::UNAUTHORIZED);
    }
    assert_eq!(h.get("/sessions").await.0, StatusCode::OK);
}

#[tokio::test]
async fn operator_workflow() {
    let mut h = Harness::new();
    let spec = HarnessSpec::eight_wire();

    let (s, body) = h.post_multipart("/profiles", &training_parts(&spec, 4, "p4")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("minimum of five"));

    let mut inconsistent = training_parts(&spec, 5, "pbad");
    inconsistent[3].2 = png(&permute_defect(&spec, Defect::DropWire { index: 1 }).unwrap());
    assert_eq!(h.post_multipart("/profiles", &inconsistent).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, body) = h.post_multipart("/profiles", &training_parts(&spec, 5, "p5")).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    assert_eq!(body["profile_id"], "p5");
    assert_eq!(h.post_multipart("/profiles", &training_parts(&spec, 5, "p5")).await.0, StatusCode::CONFLICT);
    let (_, profiles) = h.get("/profiles").await;
    assert_eq!(profiles, json!([{ "harness_type": "ht8", "profile_id": "p5" }]));

    let (s, _) = h
        .post_json("/sessions", json!({ "operator": "ana", "harness_type": "ht8", "profile_id": "nope" }))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let new_session = json!({ "operator": "ana", "harness_type": "ht8", "profile_id": "p5" });
    let (s, a) = h.post_json("/sessions", new_session.clone()).await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, b) = h.post_json("/sessions", new_session).await;
    let id = a["session_id"].as_str().unwrap().to_string();
    assert_ne!(id, b["session_id"].as_str().unwrap());
    let (_, list) = h.get("/sessions").await;
    assert_eq!(list.as_array().unwrap().len(), 2);

    let inspect_uri = format!("/sessions/{id}/inspect");
    let (s, ev) = h.post_multipart(&inspect_uri, &frame_part(&spec.clone().with_seed(50))).await;
    assert_eq!(s, StatusCode::OK, "{ev}");
    assert_eq!(ev["result"]["overall"], "Pass");
    let pass_id = ev["event_id"].as_str().unwrap().to_string();

    let swapped = permute_defect(&spec, Defect::Swap { i: 2, j: 5 }).unwrap().with_seed(51);
    let (_, ev) = h.post_multipart(&inspect_uri, &frame_part(&swapped)).await;
    assert_eq!(ev["result"]["overall"], "Fail");
    let bad: Vec<u64> = ev["result"]["views"][0]["wires"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|w| w["verdict"] == "Mismatch")
        .map(|w| w["wire_index"].as_u64().unwrap())
        .collect();
    assert_eq!(bad, vec![2, 5]);
    assert!(ev["result"]["views"][0]["wires"][2]["bbox"]["x_left"].is_u64());

    let blurred = HarnessSpec { blur_radius: 6, ..spec.clone() }.with_seed(52);
    let (_, ev) = h.post_multipart(&inspect_uri, &frame_part(&blurred)).await;
    assert_eq!(ev["result"]["overall"], "Unclear");
    assert_eq!(ev["result"]["message"], "Image not clear");
    assert_eq!(ev["operator_action"], "none");
    let unclear_id = ev["event_id"].as_str().unwrap().to_string();

    let two = [frame_part(&spec), frame_part(&spec)].concat();
    assert_eq!(h.post_multipart(&inspect_uri, &two).await.0, StatusCode::BAD_REQUEST);

    let resolve = |eid: &str| format!("/sessions/{id}/events/{eid}/resolve");
    let (s, ev) = h.post_json(&resolve(&unclear_id), json!({ "action": "manual_pass" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ev["operator_action"], "manual_pass");
    assert_eq!(h.post_json(&resolve(&unclear_id), json!({ "action": "manual_fail" })).await.0, StatusCode::CONFLICT);
    assert_eq!(h.post_json(&resolve(&pass_id), json!({ "action": "manual_pass" })).await.0, StatusCode::CONFLICT);
    assert_eq!(h.post_json(&resolve("missing"), json!({ "action": "manual_pass" })).await.0, StatusCode::NOT_FOUND);

    let (_, rec) = h.get(&format!("/sessions/{id}")).await;
    assert_eq!(rec["counts"], json!({ "pass": 1, "fail": 1, "unclear": 1, "manual_override": 1 }));
    assert!(rec["ended_at"].is_null());

    let (s, closed) = h.post_json(&format!("/sessions/{id}/close"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(closed["ended_at"].is_string());
    assert_eq!(h.post_multipart(&inspect_uri, &frame_part(&spec)).await.0, StatusCode::CONFLICT);
    assert_eq!(h.get("/sessions/unknown").await.0, StatusCode::NOT_FOUND);

    let (_, before) = h.get("/sessions").await;
    h.restart();
    let (_, after) = h.get("/sessions").await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn concurrent_inspections_keep_counts_consistent() {
    let h = Arc::new(Harness::new());
    let spec = HarnessSpec::eight_wire();
    assert_eq!(h.post_multipart("/profiles", &training_parts(&spec, 5, "p")).await.0, StatusCode::CREATED);
    let (_, s) = h.post_json("/sessions", json!({ "operator": "o", "harness_type": "ht8", "profile_id": "p" })).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    let mut tasks = Vec::new();
    for k in 0..12u64 {
        let (h, id, spec) = (h.clone(), id.clone(), spec.clone());
        tasks.push(tokio::spawn(async move {
            let frame = if k % 3 == 0 {
                permute_defect(&spec, Defect::Swap { i: 0, j: 1 }).unwrap().with_seed(k)
            } else {
                spec.with_seed(100 + k)
            };
            h.post_multipart(&format!("/sessions/{id}/inspect"), &frame_part(&frame)).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, rec) = h.get(&format!("/sessions/{id}")).await;
    assert_eq!(rec["events"].as_array().unwrap().len(), 12);
    assert_eq!(rec["counts"], json!({ "pass": 8, "fail": 4, "unclear": 0, "manual_override": 0 }));
}
