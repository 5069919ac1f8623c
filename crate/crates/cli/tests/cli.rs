use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use culrag_core::{engine, EngineConfig, Mode};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn culrag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_culrag"))
        .current_dir(dir)
        .args(args)
        .env_remove("CULRAG_MODEL_ENDPOINT")
        .output()
        .expect("spawn culrag")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Config over the fixture facts only, with the offline embedder.
fn write_config(dir: &Path, endpoint: &str) -> EngineConfig {
    let mut c = EngineConfig::default();
    c.paths.locales = Vec::new();
    c.paths.curated = vec![fixtures().join("facts.jsonl")];
    c.paths.kb_root = dir.join("kb");
    c.search.cache_dir = dir.join("cache");
    c.model.endpoint = endpoint.into();
    c.model.embedding_model = engine::HASHING_EMBEDDER.into();
    fs::write(dir.join("config.toml"), c.to_toml()).unwrap();
    c
}

fn build(dir: &Path) {
    let out = culrag(dir, &["build-kb", "--config", "config.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = culrag(dir, &["index", "--config", "config.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

fn questions() -> String {
    fixtures().join("questions.jsonl").to_str().unwrap().to_string()
}

/// Minimal model server answering every generate call with `answer`.
fn serve(answer: &'static str) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let reply = if req.url() == "/api/generate" {
                serde_json::json!({ "response": answer, "done": true }).to_string()
            } else {
                let _ = req.respond(tiny_http::Response::empty(404));
                continue;
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(reply).with_header(header));
        }
    });
    format!("http://{addr}")
}

#[test]
fn build_kb_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), engine::MOCK_ORACLE);
    let out = culrag(tmp.path(), &["build-kb", "--config", "config.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("GB: CURATED=4"), "{text}");
    assert!(text.contains("total:"), "{text}");
}

#[test]
fn run_track_against_http_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "http://127.0.0.1:9");
    build(dir);
    let endpoint = serve("London");
    let q = questions();
    let out = culrag(
        dir,
        &["run-track", "--config", "config.toml", "--endpoint", &endpoint, "--dataset", &q, "--track", "saq", "--out", "run"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let echoed = fs::read_to_string(dir.join("run/config.toml")).unwrap();
    let echoed = EngineConfig::from_toml(&echoed).unwrap();
    assert_eq!(echoed.model.endpoint, endpoint);
    let preds = fs::read_to_string(dir.join("run/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 20);
    assert!(dir.join("run/records.jsonl").is_file());

    // only the one London question is right: en-GB 25%, en 12.5%
    let out = culrag(
        dir,
        &["evaluate", "--config", "config.toml", "--dataset", &q, "--track", "saq", "--predictions", "run/predictions.jsonl"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("en-GB"), "{table}");
    assert!(table.contains("25.00"), "{table}");
    assert!(table.contains("12.50"), "{table}");
}

#[test]
fn unreachable_model_marks_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut c = write_config(dir, "http://127.0.0.1:9");
    c.model.retries = 0;
    c.model.timeout_secs = 2;
    fs::write(dir.join("config.toml"), c.to_toml()).unwrap();
    build(dir);
    let q = questions();
    let out = culrag(dir, &["run-track", "--config", "config.toml", "--dataset", &q, "--track", "saq", "--out", "run"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(dir.join("run/errors.txt").is_file());
    let preds = fs::read_to_string(dir.join("run/predictions.jsonl")).unwrap();
    assert!(preds.lines().all(|l| l.contains("<NO_ANSWER>")), "{preds}");
}

#[test]
fn missing_kb_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), engine::MOCK_ORACLE);
    let q = questions();
    let out = culrag(tmp.path(), &["run-track", "--config", "config.toml", "--dataset", &q, "--track", "saq", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("GB"), "{}", stderr(&out));
}

#[test]
fn live_search_is_refused_for_batch_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, engine::MOCK_ORACLE);
    build(dir);
    let q = questions();
    let out = culrag(
        dir,
        &[
            "run-track", "--config", "config.toml", "--mode", "rag-web", "--search", "live", "--dataset", &q, "--track",
            "saq", "--out", "run",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "jobz = 3\n").unwrap();
    let out = culrag(tmp.path(), &["build-kb", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn ask_prints_one_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, engine::MOCK_ORACLE);
    build(dir);
    let out = culrag(
        dir,
        &["ask", "--config", "config.toml", "--id", "en-GB-002", "What sport is played at Wimbledon?"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = String::from_utf8(out.stdout).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["question_id"], "en-GB-002");
    assert_eq!(rec["route"]["kb_id"], "GB");
}

#[test]
fn ablate_writes_one_row_per_prompt_and_language() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut c = write_config(dir, engine::MOCK_ORACLE);
    c.routing.mode = Mode::RagBase;
    fs::write(dir.join("config.toml"), c.to_toml()).unwrap();
    build(dir);
    let q = questions();
    let out = culrag(dir, &["ablate", "--config", "config.toml", "--dataset", &q, "--track", "saq", "--out", "abl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.join("abl/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("prompt_id,language,track,score"));
    // 3 prompts x (en, es, zh, overall)
    assert_eq!(lines.count(), 12, "{csv}");
    for p in ["mp", "rp-v1", "rp-v2"] {
        assert!(dir.join("abl").join(p).join("predictions.jsonl").is_file());
    }
}
