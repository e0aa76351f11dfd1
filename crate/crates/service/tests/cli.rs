mod support;

use std::path::Path;
use std::process::{Command, Output};

use dms_service::api::{render, IngestRequest, Op, QueryRequest};
use dms_service::{Service, ServiceConfig};
use serde_json::Value;
use support::*;

const CONFIG: &str = r#"
output_dim = 2
k_min = 2
k_max = 6
restarts = 2
scaling = "unit"
pseudo_label_threshold = 1.0
auto_update = false
"#;

fn dms(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dms"))
        .arg("--config")
        .arg(dir.join("dms.toml"))
        .arg("--data-dir")
        .arg(dir.join("data"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DMS_CONFIG")
        .output()
        .unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dms.toml"), CONFIG).unwrap();
    dir
}

fn seeded(dir: &Path) {
    let records = render(&IngestRequest {
        records: embedding_records(1, 20, "train"),
    });
    std::fs::write(dir.join("records.json"), records).unwrap();
    let r = ok_json(&dms(dir, &["ingest", "--records", dir.join("records.json").to_str().unwrap()]));
    assert_eq!(r["inserted"], 60);
    let u = ok_json(&dms(dir, &["update"]));
    assert_eq!(u["generation"], 1);
}

fn service_for(dir: &Path) -> Service {
    let mut config = ServiceConfig::from_sources(CONFIG, Vec::new()).unwrap();
    config.data_dir = Some(dir.join("data"));
    Service::new(config).unwrap()
}

#[test]
fn status_against_empty_state() {
    let dir = workspace();
    let s = ok_json(&dms(dir.path(), &["status"]));
    assert_eq!(s["generation"], 0);
    assert_eq!(s["store"]["record_count"], 0);
    assert_eq!(s["zoo"]["models"], 0);
}

#[test]
fn query_prints_the_requested_lookup_count() {
    let dir = workspace();
    seeded(dir.path());
    let req = QueryRequest {
        dataset_id: "d".into(),
        samples: embedding_samples(3, 4),
        ops: [Op::Certainty].into(),
        n: None,
        seed: None,
    };
    std::fs::write(dir.path().join("query.json"), render(&req)).unwrap();
    let path = dir.path().join("query.json");
    let out = ok_json(&dms(
        dir.path(),
        &["query", "--request", path.to_str().unwrap(), "--ops", "lookup", "-n", "10"],
    ));
    assert_eq!(out["lookup"]["records"].as_array().unwrap().len(), 10);
    assert_eq!(out["certainty"], Value::Null);
    assert_eq!(out["generation"], 1);
}

#[test]
fn query_accepts_a_vector_file() {
    let dir = workspace();
    seeded(dir.path());
    let export = ok_json(&dms(dir.path(), &["export", "--out", dir.path().join("v.fdms").to_str().unwrap()]));
    assert_eq!(export["count"], 60);
    let out = ok_json(&dms(
        dir.path(),
        &["query", "--vectors", dir.path().join("v.fdms").to_str().unwrap(), "--dataset", "again", "--ops", "lookup,certainty"],
    ));
    assert_eq!(out["lookup"]["records"].as_array().unwrap().len(), 60);
    assert_eq!(out["certainty"]["certainty"], 100.0);
}

#[test]
fn cli_and_api_print_the_same_objects() {
    let dir = workspace();
    seeded(dir.path());
    let req = QueryRequest {
        dataset_id: "d".into(),
        samples: embedding_samples(5, 3),
        ops: [Op::Lookup, Op::Recommend, Op::Certainty, Op::PseudoLabel].into(),
        n: Some(7),
        seed: Some(11),
    };
    std::fs::write(dir.path().join("q.json"), render(&req)).unwrap();
    let cli_status = dms(dir.path(), &["status"]);
    let cli_query = dms(dir.path(), &["query", "--request", dir.path().join("q.json").to_str().unwrap()]);
    assert!(cli_query.status.success());

    let service = service_for(dir.path());
    let mut api_status: Value = serde_json::from_str(&render(&service.status().unwrap())).unwrap();
    let mut cli_status: Value = serde_json::from_slice(&cli_status.stdout).unwrap();
    // The CLI query ran between the two status calls and moved the drift counters.
    for s in [&mut api_status, &mut cli_status] {
        s["drift"] = Value::Null;
        s["store"]["disk_bytes"] = Value::Null;
    }
    assert_eq!(api_status, cli_status);

    let api_query = render(&service.query(req).unwrap());
    let strip = |text: &str| {
        let mut v: Value = serde_json::from_str(text).unwrap();
        v["timings"] = Value::Null;
        render(&v)
    };
    let cli_text = String::from_utf8(cli_query.stdout).unwrap();
    assert_eq!(strip(cli_text.trim_end()), strip(&api_query));
    // Same serializer: the raw text differs only inside `timings`.
    assert!(cli_text.starts_with(&api_query[..api_query.find("\"timings\"").unwrap()]));
}

#[test]
fn ingest_binary_register_recommend_and_export() {
    let dir = workspace();
    seeded(dir.path());
    let d = dir.path();
    let export = ok_json(&dms(d, &["export", "--out", d.join("all.fdms").to_str().unwrap(), "--source", "train"]));
    let bytes = std::fs::read(d.join("all.fdms")).unwrap();
    assert_eq!(export["sha256"], dms_service::api::sha256_hex(&bytes));
    assert!(d.join("all.fdms.json").exists());

    // A second data directory receives the export and reproduces the digest.
    let other = workspace();
    let o = other.path();
    let r = ok_json(&dms(
        o,
        &["ingest", "--vectors", d.join("all.fdms").to_str().unwrap(), "--manifest", d.join("all.fdms.json").to_str().unwrap()],
    ));
    assert_eq!(r["inserted"], 60);
    let again = ok_json(&dms(o, &["export", "--out", o.join("copy.fdms").to_str().unwrap()]));
    assert_eq!(again["sha256"], export["sha256"]);

    let status = ok_json(&dms(d, &["status"]));
    let k = status["store"]["per_cluster"].as_array().unwrap().len();
    let mut probs = vec![0.0; k];
    probs[0] = 1.0;
    let reg = serde_json::json!({
        "model_id": "m1",
        "artifact": { "kind": "uri", "uri": "s3://bucket/m1" },
        "train_distribution": { "k": k, "probs": probs, "sample_count": 10, "cluster_model_version": 1 },
    });
    std::fs::write(d.join("reg.json"), reg.to_string()).unwrap();
    std::fs::write(d.join("weights.bin"), b"weights").unwrap();
    let rec = ok_json(&dms(
        d,
        &["register-model", "--file", d.join("reg.json").to_str().unwrap(), "--artifact", d.join("weights.bin").to_str().unwrap()],
    ));
    assert_eq!(rec["content_hash"], dms_service::api::sha256_hex(b"weights"));
    let rank = ok_json(&dms(d, &["recommend", "--dataset", "train"]));
    assert_eq!(rank["pdf_source"], "store");
    assert_eq!(rank["best"]["model_id"], "m1");
}

#[test]
fn bench_lookup_reports_percentiles() {
    let dir = workspace();
    seeded(dir.path());
    let r = ok_json(&dms(dir.path(), &["bench-lookup", "--n", "50", "--iters", "20"]));
    assert_eq!((r["n"].as_u64(), r["iters"].as_u64()), (Some(50), Some(20)));
    let p = |k: &str| r[k].as_f64().unwrap();
    assert!(p("p50_ms") <= p("p90_ms") && p("p90_ms") <= p("p99_ms") && p("p99_ms") <= p("max_ms"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = workspace();
    let out = dms(dir.path(), &["bench-lookup"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().rfind(|l| l.starts_with("{\"error\"")).unwrap();
    let err: Value = serde_json::from_str(line).unwrap();
    assert_eq!(err["error"]["kind"], "not_initialized");

    let out = dms(dir.path(), &["query", "--ops", "lookup"]);
    assert_eq!(out.status.code(), Some(2), "missing --request is a usage error");

    std::fs::write(dir.path().join("dms.toml"), "k_min = 9\nk_max = 3\n").unwrap();
    assert_eq!(dms(dir.path(), &["status"]).status.code(), Some(1));
}
