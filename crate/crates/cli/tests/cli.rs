#[path = "../../core/tests/common/fixtures.rs"]
mod fixtures;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use agavqa_core::seed::sha256_hex;
use agavqa_core::subjective::{MosRecord, RatingRecord, z_to_scale};
use agavqa_core::{AgavItem, jsonl};
use chrono::{TimeZone, Utc};
use serde_json::Value;

fn agavqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agavqa"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, values: &[T]) {
    std::fs::write(path, jsonl::to_bytes(values)).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn oracle_choice_is_always_right() {
    let dir = tempfile::tempdir().unwrap();
    let groups = dir.path().join("g.jsonl");
    write_jsonl(&groups, &fixtures::pair_groups(30, 7));
    let out = agavqa(&["eval-pair", "--backend", "mock:oracle-choice", "--groups", p(&groups), "--seed", "7"]);
    let report = json_of(&out);
    assert_eq!(report["meta"]["seed"], 7);
    assert_eq!(report["meta"]["manifest_digest"], sha256_hex(&std::fs::read(&groups).unwrap()));
    assert_eq!(report["meta"]["version"], env!("CARGO_PKG_VERSION"));
    let protocols = report["protocols"].as_array().unwrap();
    assert_eq!(protocols.len(), 1);
    assert_eq!(protocols[0]["protocol"], "multi-input");
    assert_eq!(protocols[0]["overall_accuracy"], 1.0);
}

#[test]
fn oracle_triple_runs_single_input_only() {
    let dir = tempfile::tempdir().unwrap();
    let groups = dir.path().join("g.jsonl");
    write_jsonl(&groups, &fixtures::pair_groups(12, 1));
    let report = json_of(&agavqa(&["eval-pair", "--backend", "mock:oracle-triple", "--groups", p(&groups)]));
    let protocols = report["protocols"].as_array().unwrap();
    assert_eq!(protocols.len(), 1);
    assert_eq!(protocols[0]["protocol"], "single-input");
    assert_eq!(protocols[0]["overall_accuracy"], 1.0);

    let out = agavqa(&["eval-pair", "--backend", "mock:oracle-triple", "--groups", p(&groups), "--protocol", "multi-input"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multi-input choice"));
}

#[test]
fn fifteen_identical_raters_reproduce_the_normalized_scale() {
    let dir = tempfile::tempdir().unwrap();
    let values = [1.0, 2.0, 2.5, 3.0, 4.2, 5.0];
    let mut records = Vec::new();
    for s in 0..15 {
        for (i, v) in values.iter().enumerate() {
            records.push(RatingRecord {
                subject_id: format!("clone{s:02}"),
                item_id: format!("item{i}"),
                audio_quality: *v,
                consistency: 6.0 - v,
                overall: *v,
                timestamp: Utc.with_ymd_and_hms(2026, 3, 1, 10, i as u32, 0).unwrap(),
            });
        }
    }
    let ratings = dir.path().join("r.jsonl");
    let mos_path = dir.path().join("mos.jsonl");
    write_jsonl(&ratings, &records);
    let report = json_of(&agavqa(&["aggregate-mos", "--ratings", p(&ratings), "--out", p(&mos_path)]));
    assert_eq!(report["n_subjects"], 15);

    let mean = values.iter().sum::<f64>() / 6.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    let mos: Vec<MosRecord> = jsonl::read_path(&mos_path).unwrap();
    assert_eq!(mos.len(), 6);
    for (rec, v) in mos.iter().zip(values) {
        let expected = (100.0 * ((v - mean) / sd + 3.0) / 6.0).clamp(0.0, 100.0);
        assert!((rec.mos_overall - expected).abs() < 1e-9);
        assert!((rec.mos_audio_quality - expected).abs() < 1e-9);
        assert!((rec.mos_consistency - z_to_scale(-(v - mean) / sd)).abs() < 1e-9);
        assert_eq!(rec.rater_count, 15);
        assert!(rec.std_overall < 1e-9);
    }
    assert_eq!(report["mos_digest"], sha256_hex(&std::fs::read(&mos_path).unwrap()));
}

#[test]
fn scoring_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("items.jsonl");
    write_jsonl(&manifest, &fixtures::scored_items(40, 3, 2));
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = agavqa(&[
            "eval-score", "--backend", "mock:noisy:5", "--seed", "11", "--k", "5", "--manifest", p(&manifest),
            "--workers", workers, "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.json", "1");
    assert_eq!(a, run("b.json", "1"));
    assert_eq!(a, run("c.json", "4"));
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["meta"]["seed"], 11);
    assert_eq!(report["k"], 5);
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);
    assert_eq!(report["valid"], true);
}

#[test]
fn environment_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let groups = dir.path().join("g.jsonl");
    write_jsonl(&groups, &fixtures::pair_groups(5, 3));
    let out = Command::new(env!("CARGO_BIN_EXE_agavqa"))
        .arg("random-baseline")
        .env("AGAVQA_GROUPS", &groups)
        .env("AGAVQA_SEED", "42")
        .output()
        .unwrap();
    let report = json_of(&out);
    assert_eq!(report["meta"]["seed"], 42);
    assert_eq!(report["groups"], 5);
}

#[test]
fn table_format_is_text() {
    let dir = tempfile::tempdir().unwrap();
    let groups = dir.path().join("g.jsonl");
    write_jsonl(&groups, &fixtures::pair_groups(5, 3));
    let out = agavqa(&["random-baseline", "--groups", p(&groups), "--format", "table"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("agavqa "));
    assert!(text.contains("group mean"));
}

#[test]
fn bad_invocations_fail_without_leaving_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");

    let o = agavqa(&["eval-score", "--bogus"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());

    let missing = dir.path().join("missing.jsonl");
    let o = agavqa(&["eval-score", "--backend", "mock:oracle-triple", "--manifest", p(&missing), "--out", p(&out_path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.jsonl"));
    assert!(!out_path.exists());

    // items without ground truth cannot be scored
    let manifest = dir.path().join("items.jsonl");
    let mut items = fixtures::scored_items(10, 1, 0);
    items[3].ground_truth = None;
    write_jsonl(&manifest, &items);
    let o = agavqa(&["eval-score", "--backend", "mock:oracle-triple", "--manifest", p(&manifest), "--out", p(&out_path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out_path.exists());
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1);
}

/// Minimal remote scorer: advertises triple scores, answers with a value
/// derived from the request body and fails every request for `broken` items.
fn failing_scorer(broken: Vec<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8_lossy(&body);
            let (status, reply) = if request_line.contains("/capabilities") {
                ("200 OK", r#"{"triple":true,"levels":false,"choice":false}"#.to_string())
            } else if broken.iter().any(|id| body.contains(&format!("\"{id}\""))) {
                ("500 Internal Server Error", r#"{"error":"down"}"#.to_string())
            } else {
                let v = body.bytes().map(u32::from).sum::<u32>() % 100;
                ("200 OK", format!(r#"{{"audio_quality":{v},"consistency":{v},"overall":{v}}}"#))
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    url
}

#[test]
fn too_many_failures_exit_nonzero_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<AgavItem> = fixtures::scored_items(20, 1, 0);
    let manifest = dir.path().join("items.jsonl");
    write_jsonl(&manifest, &items);
    let broken = items.iter().take(5).map(|i| i.id.clone()).collect();
    let url = failing_scorer(broken);
    let out_path = dir.path().join("report.json");
    let o = agavqa(&[
        "eval-score", "--backend", "http", "--base-url", &url, "--retries", "0", "--manifest", p(&manifest),
        "--out", p(&out_path),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(report["valid"], false);
    assert_eq!(report["n_excluded"], 5);
}

#[test]
fn synth_corpus_writes_manifest_and_reversed_audio() {
    let dir = tempfile::tempdir().unwrap();
    let media = dir.path().join("media");
    std::fs::create_dir_all(&media).unwrap();
    let sources = fixtures::toy_sources(&media, 5);
    let src_path = dir.path().join("sources.jsonl");
    write_jsonl(&src_path, &sources);
    let out = dir.path().join("corpus/pairs.jsonl");
    let report = json_of(&agavqa(&[
        "synth-corpus", "--manifest", p(&src_path), "--targets", "av=16,at=16,mt=8", "--seed", "17", "--out", p(&out),
        "--media-root", p(&media),
    ]));
    assert_eq!(report["pairs"], 40);
    assert_eq!(report["counts"]["audio-video"]["audio-quality"], 8);
    assert_eq!(report["reversed_written"], 10);
    assert_eq!(report["corpus_digest"], sha256_hex(&std::fs::read(&out).unwrap()));
    assert_eq!(std::fs::read_dir(dir.path().join("corpus/reversed")).unwrap().count(), 10);
}

#[test]
fn serve_then_export_offline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("items.jsonl");
    write_jsonl(&manifest, &fixtures::scored_items(4, 1, 0));
    let state = dir.path().join("state");
    let mut child = Command::new(env!("CARGO_BIN_EXE_agavqa"))
        .args(["serve", "--manifest", p(&manifest), "--state-dir", p(&state), "--study-id", "pilot", "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let post = |path: &str, body: Value| -> (u16, Value) {
        let mut r = agent.post(&format!("{base}{path}")).send_json(body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    };
    let (status, session) = post("/api/session", serde_json::json!({"study_id": "pilot", "subject_id": "ann"}));
    assert_eq!(status, 200);
    let sid = session["session_id"].as_str().unwrap().to_string();
    for v in [2.0, 3.5] {
        let item: Value = agent
            .get(&format!("{base}/api/session/{sid}/item"))
            .call()
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        let id = item["item"]["item_id"].clone();
        let (status, _) = post(
            &format!("/api/session/{sid}/rating"),
            serde_json::json!({"item_id": id, "audio_quality": v, "consistency": v, "overall": v}),
        );
        assert_eq!(status, 200);
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let out = agavqa(&["export", "--manifest", p(&manifest), "--state-dir", p(&state), "--study-id", "pilot"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<RatingRecord> = jsonl::read(out.stdout.as_slice()).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.subject_id == "ann"));

    let o = agavqa(&["export", "--manifest", p(&manifest), "--state-dir", p(&state), "--study-id", "other"]);
    assert!(!o.status.success());
}
