mod support;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dms_core::datastore::Label;
use dms_core::embedding::encode_vectors;
use dms_service::api::{render, sha256_hex, UploadEntry, UploadManifest, DIGEST_HEADER, MANIFEST_HEADER};
use dms_service::{http, Service, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use support::*;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn error_kind(&self) -> String {
        self.json()["error"]["kind"].as_str().unwrap().to_string()
    }
}

async fn call(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

fn app_with(config: ServiceConfig) -> (Arc<Service>, Router) {
    let service = Arc::new(Service::new(config).unwrap());
    (Arc::clone(&service), http::router(service))
}

fn records_json(seed: u64, per: usize, source: &str) -> Value {
    json!({ "records": serde_json::to_value(embedding_records(seed, per, source)).unwrap() })
}

fn embeddings_query(dataset: &str, vectors: &[[f32; 2]], ops: &[&str]) -> Value {
    json!({
        "dataset_id": dataset,
        "samples": { "kind": "embeddings", "vectors": vectors },
        "ops": ops,
    })
}

fn near_points(n: usize) -> Vec<[f32; 2]> {
    blob_points(7, n).into_iter().take(n).map(|(_, p)| p).collect()
}

async fn ready_app() -> (Arc<Service>, Router) {
    let (service, app) = app_with(config());
    assert_eq!(post_json(&app, "/v1/data", &records_json(1, 30, "train")).await.status, StatusCode::OK);
    assert_eq!(post_json(&app, "/v1/admin/update", &json!({})).await.status, StatusCode::OK);
    (service, app)
}

#[tokio::test]
async fn status_on_a_fresh_service() {
    let (_, app) = app_with(config());
    let r = get(&app, "/v1/status").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "application/json");
    let s = r.json();
    assert_eq!(s["generation"], 0);
    assert_eq!(s["store"]["record_count"], 0);
    assert_eq!(s["zoo"]["models"], 0);
    assert_eq!(s["embedder"], Value::Null);
}

#[tokio::test]
async fn ingest_update_and_query_over_http() {
    let (_, app) = app_with(config());
    let r = post_json(&app, "/v1/data", &records_json(1, 30, "train")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["inserted"], 90);
    assert_eq!(get(&app, "/v1/status").await.json()["store"]["record_count"], 90);

    let r = post_json(&app, "/v1/admin/update", &json!({})).await;
    assert_eq!(r.status, StatusCode::OK);
    let summary = r.json();
    assert_eq!(summary["generation"], 1);
    assert_eq!(summary["records_reindexed"], 90);

    let mut q = embeddings_query("d", &near_points(12), &["lookup", "recommend", "certainty"]);
    q["n"] = json!(50);
    let r = post_json(&app, "/v1/query", &q).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["generation"], 1);
    assert_eq!(body["lookup"]["records"].as_array().unwrap().len(), 50);
    assert_eq!(body["recommendation"]["decision"], "train-from-scratch");
    assert!(body["certainty"]["certainty"].as_f64().unwrap() >= 95.0);
    let record = &body["lookup"]["records"][0];
    assert_eq!(record["label"]["schema"], "blob");
    assert!(record.get("embedding").is_none());
}

#[tokio::test]
async fn register_and_rank_models() {
    let (_, app) = ready_app().await;
    let q = post_json(&app, "/v1/query", &embeddings_query("d", &near_points(9), &["certainty"])).await;
    let pdf = q.json()["pdf"].clone();
    let reg = json!({
        "model_id": "m1",
        "artifact": { "kind": "blob", "bytes": "AAEC" },
        "train_distribution": pdf,
        "metadata": { "arch": "cnn" },
    });
    let r = post_json(&app, "/v1/models", &reg).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["content_hash"], sha256_hex(&[0, 1, 2]));
    assert_eq!(post_json(&app, "/v1/models", &reg).await.status, StatusCode::CONFLICT);

    let r = get(&app, "/v1/models/rank?dataset=d").await;
    assert_eq!(r.status, StatusCode::OK);
    let rank = r.json();
    assert_eq!(rank["pdf_source"], "query");
    assert_eq!(rank["best"]["model_id"], "m1");
    assert_eq!(rank["ranked"][0]["jsd"], 0.0);

    assert_eq!(get(&app, "/v1/models/rank?dataset=unknown").await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/v1/models/rank").await.status, StatusCode::BAD_REQUEST);
    let rec = post_json(&app, "/v1/query", &embeddings_query("d", &near_points(9), &["recommend"])).await;
    assert_eq!(rec.json()["recommendation"]["chosen"], "m1");
}

#[tokio::test]
async fn drifted_query_adds_a_trigger_to_the_audit_log() {
    let (service, app) = app_with(ServiceConfig {
        warmup_datasets: 1,
        ..config()
    });
    post_json(&app, "/v1/data", &records_json(1, 30, "train")).await;
    post_json(&app, "/v1/admin/update", &json!({})).await;
    post_json(&app, "/v1/query", &embeddings_query("warm", &near_points(6), &["certainty"])).await;
    let c = 5.0f32;
    let r = post_json(&app, "/v1/query", &embeddings_query("drifted", &[[c, c]; 8], &["certainty"])).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.json()["certainty"]["certainty"].as_f64().unwrap() < 80.0);
    let status = get(&app, "/v1/status").await.json();
    assert_eq!(status["drift"]["audit_triggers"], 1);
    assert_eq!(status["drift"]["triggers"], json!([1]));
    let audit = service.system().audit().entries().unwrap();
    assert_eq!(audit.last().unwrap().dataset_id.as_deref(), Some("drifted"));
}

#[tokio::test]
async fn errors_map_to_distinct_statuses() {
    let (_, app) = app_with(ServiceConfig {
        max_request_bytes: 4096,
        ..config()
    });
    let q = embeddings_query("d", &near_points(3), &["lookup"]);
    let r = post_json(&app, "/v1/query", &q).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::SERVICE_UNAVAILABLE, "not_initialized".into()));

    post_json(&app, "/v1/data", &records_json(1, 5, "train")).await;
    post_json(&app, "/v1/admin/update", &json!({})).await;

    let r = post_json(&app, "/v1/query", &embeddings_query("d", &[[1.0, 2.0]], &["lookup"])).await;
    assert_eq!(r.status, StatusCode::OK);
    let mut q = embeddings_query("d", &[[1.0, 2.0]], &["lookup"]);
    q["n"] = json!(16);
    let r = post_json(&app, "/v1/query", &q).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::RANGE_NOT_SATISFIABLE, "insufficient_data".into()));

    let wide = json!({ "dataset_id": "d", "samples": { "kind": "embeddings", "vectors": [[1.0, 2.0, 3.0]] } });
    let r = post_json(&app, "/v1/query", &wide).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::UNPROCESSABLE_ENTITY, "dim_mismatch".into()));
    assert!(r.json()["error"]["message"].as_str().unwrap().contains("expected 2, found 3"));

    let empty = json!({ "dataset_id": "d", "samples": { "kind": "embeddings", "vectors": [] } });
    assert_eq!(post_json(&app, "/v1/query", &empty).await.error_kind(), "empty_input");

    let both = json!({ "dataset_id": "d", "samples": { "kind": "pixels", "items": [] } });
    let r = post_json(&app, "/v1/query", &both).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::BAD_REQUEST, "bad_request".into()));

    let req = Request::post("/v1/query").body(Body::from("{not json")).unwrap();
    assert_eq!(call(&app, req).await.status, StatusCode::BAD_REQUEST);

    let big = embeddings_query("d", &vec![[1.0, 2.0]; 2000], &["lookup"]);
    let r = post_json(&app, "/v1/query", &big).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large".into()));

    assert_eq!(get(&app, "/v1/nowhere").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn force_update_during_an_update_conflicts() {
    let (service, app) = app_with(ServiceConfig {
        k_max: 12,
        restarts: 5,
        ..config()
    });
    service
        .ingest(dms_service::api::IngestRequest {
            records: embedding_records(3, 4000, "big"),
        })
        .unwrap();
    let background = {
        let service = Arc::clone(&service);
        std::thread::spawn(move || service.force_update())
    };
    while !service.system().update_running() {
        assert!(!background.is_finished(), "update finished before it was observed");
        std::hint::spin_loop();
    }
    let r = post_json(&app, "/v1/admin/update", &json!({})).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::CONFLICT, "update_in_progress".into()));
    assert!(background.join().unwrap().is_ok());
}

fn upload(header: String, bytes: Vec<u8>) -> Request<Body> {
    Request::post("/v1/data")
        .header("content-type", "application/octet-stream")
        .header(MANIFEST_HEADER, header)
        .body(Body::from(bytes))
        .unwrap()
}

#[tokio::test]
async fn binary_upload_then_export_has_the_same_digest() {
    let (_, app) = app_with(config());
    let points: Vec<Vec<f32>> = blob_points(4, 20)
        .into_iter()
        .map(|(_, p)| vec![p[0] + 1e-7, p[1] - 3.25e-5])
        .collect();
    let rows: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();
    let bytes = encode_vectors(&rows, 2).unwrap();
    let manifest = UploadManifest {
        dim: 2,
        entries: (0..points.len())
            .map(|i| UploadEntry {
                row: i as u64,
                sample_id: format!("u{i:03}"),
                source: "upload".into(),
                label: Label::new("blob", vec![i as u8]),
            })
            .collect(),
    };
    let r = call(&app, upload(manifest.to_header(), bytes.clone())).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["inserted"], 60);

    let r = get(&app, "/v1/export?source=upload").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "application/octet-stream");
    assert_eq!(r.body, bytes);
    assert_eq!(r.headers[DIGEST_HEADER].to_str().unwrap(), sha256_hex(&bytes));
    let exported = UploadManifest::from_header(r.headers[MANIFEST_HEADER].to_str().unwrap()).unwrap();
    assert_eq!(exported, manifest);

    // Export survives an update: cluster ids change, vectors do not.
    post_json(&app, "/v1/admin/update", &json!({})).await;
    let r = get(&app, "/v1/export").await;
    assert_eq!(r.headers[DIGEST_HEADER].to_str().unwrap(), sha256_hex(&bytes));
    assert_eq!(r.headers["x-dms-generation"], "1");

    // A plain-JSON manifest header is accepted too.
    let mut second = manifest.clone();
    for e in &mut second.entries {
        e.sample_id.insert(0, 'v');
    }
    let r = call(&app, upload(render(&second), bytes.clone())).await;
    assert_eq!(r.status, StatusCode::OK);

    let mut wrong = manifest.clone();
    wrong.dim = 4;
    let r = call(&app, upload(wrong.to_header(), bytes.clone())).await;
    assert_eq!((r.status, r.error_kind()), (StatusCode::BAD_REQUEST, "format_error".into()));
    let r = call(&app, upload("!!".into(), bytes)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}
