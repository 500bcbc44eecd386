use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

fn crashscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crashscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// OpenAI-style endpoint that answers every request with `content`.
/// Returns the base URL and a request counter.
fn mock_provider(content: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let reply = serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            });
        }
    });
    (url, hits)
}

/// Synthetic dataset plus providers.json and run.json pointing at `endpoint`.
fn workspace(dir: &Path, endpoint: &str) -> PathBuf {
    let out = crashscope(&["synth", "--out", p(dir), "--accidents", "2", "--normal", "2", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let providers = serde_json::json!({"providers": [{
        "name": "mock",
        "kind": "openai_chat",
        "endpoint": endpoint,
        "model_id": "mock-vision",
        "request_timeout": 10.0,
    }]});
    std::fs::write(dir.join("providers.json"), providers.to_string()).unwrap();
    let run = serde_json::json!({
        "dataset_root": "data",
        "detections_dir": "detections",
        "providers_file": "providers.json",
        "output_dir": "out",
        "retry": {"max_attempts": 2, "base_delay": 0.0, "factor": 2.0},
        "metrics": {
            "lexicon": "lexicon.txt",
            "sentence_embedder": {"kind": "hashed", "dimension": 32}
        }
    });
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, run.to_string()).unwrap();
    cfg
}

const POSITIVE: &str = "{\"classification\": 1, \"scene_context\": \"two-lane road in light rain\", \"justification\": \"the red sedan collides with the pedestrian\", \"objects\": [{\"label\": \"car\", \"description\": \"red sedan\"}]}";

#[test]
fn dataset_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(crashscope(&["synth", "--out", p(d), "--accidents", "1", "--normal", "1"]).status.success());
    let data = d.join("data");
    let dets = d.join("detections");

    let out = crashscope(&["ingest", "--root", p(&data)]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("2 scenarios (1 accident, 1 normal)"));
    assert!(data.join("manifest.json").exists());

    let out = crashscope(&["validate-detections", "--root", p(&data), "--detections", p(&dets)]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).matches(": ok").count(), 2);

    let dump = d.join("tracks.json");
    let out = crashscope(&["track", "--root", p(&data), "--detections", p(&dets), "--scenario", "syn000", "--dump", p(&dump)]);
    assert!(out.status.success());
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&dump).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r["confirmed"] == true));

    let frames_out = d.join("enhanced");
    let out = crashscope(&["render", "--root", p(&data), "--detections", p(&dets), "--scenario", "syn001", "--out", p(&frames_out)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_dir(frames_out.join("syn001")).unwrap().count();
    assert_eq!(written, 45);
    assert!(frames_out.join("syn001/000044_enhanced.png").exists());
}

#[test]
fn broken_sidecar_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(crashscope(&["synth", "--out", p(d), "--accidents", "1", "--normal", "1"]).status.success());
    std::fs::write(d.join("detections/syn001.json"), "{\"scenario_id\": \"syn001\"").unwrap();
    let out = crashscope(&["validate-detections", "--root", p(&d.join("data")), "--detections", p(&d.join("detections"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("syn000: ok"));
}

#[test]
fn evaluate_over_http_then_replay_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = mock_provider(POSITIVE);
    let cfg = workspace(dir.path(), &url);

    let out = crashscope(&["evaluate", "--config", p(&cfg), "--run-id", "first"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // 4 scenarios x 15 windows, every base window positive so every one is re-sent.
    assert_eq!(hits.load(Ordering::SeqCst), 120);
    let run = dir.path().join("out/runs/first");
    for f in ["summary.json", "results.json", "run.json", "report.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_dir(run.join("responses")).unwrap().count(), 120);

    // Second run: same cache, provider now unreachable, identical summary.
    let dead = serde_json::json!([{
        "name": "mock", "kind": "openai_chat", "endpoint": "http://127.0.0.1:9/unreachable", "model_id": "mock-vision"
    }]);
    std::fs::write(dir.path().join("providers.json"), dead.to_string()).unwrap();
    let out = crashscope(&["evaluate", "--config", p(&cfg), "--run-id", "second"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(hits.load(Ordering::SeqCst), 120);
    let a = std::fs::read(run.join("summary.json")).unwrap();
    let b = std::fs::read(dir.path().join("out/runs/second/summary.json")).unwrap();
    assert_eq!(a, b);

    let runs = dir.path().join("out/runs");
    let csv = crashscope(&["report", "--run", "first", "--runs-dir", p(&runs), "--format", "csv"]);
    assert!(csv.status.success());
    let text = stdout(&csv);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header plus base and enhanced rows");
    assert!(lines[0].starts_with("provider,mode,unit,"));
    assert!(lines[1].starts_with("mock,base,scenario,4,"));
    assert_eq!(text, String::from_utf8(std::fs::read(run.join("report.csv")).unwrap()).unwrap());

    let json = crashscope(&["report", "--run", p(&run), "--format", "json"]);
    assert!(json.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    // Reusing a run id is refused.
    let out = crashscope(&["evaluate", "--config", p(&cfg), "--run-id", "first"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unparseable_replies_give_partial_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = mock_provider("I cannot help with that.");
    let cfg = workspace(dir.path(), &url);
    let out = crashscope(&["evaluate", "--config", p(&cfg), "--modes", "base", "--run-id", "r"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(hits.load(Ordering::SeqCst), 60);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/runs/r/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"][0]["unscored_windows"], 60);
}

#[test]
fn fatal_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = crashscope(&["evaluate", "--config", p(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(1));

    let cfg = workspace(dir.path(), "http://127.0.0.1:9/x");
    let unknown = crashscope(&["evaluate", "--config", p(&cfg), "--providers", "ghost"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("ghost"));

    std::fs::remove_file(dir.path().join("detections/syn000.json")).unwrap();
    let no_sidecar = crashscope(&["evaluate", "--config", p(&cfg)]);
    assert_eq!(no_sidecar.status.code(), Some(1));
}

#[test]
fn metrics_text_scores_reference_sentences() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/embeddings");
    let sentences: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fixtures.join("reference_sentences.json")).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("ref.txt");
    let h = dir.path().join("hyp.txt");
    let s1 = sentences["s1"].as_str().unwrap();
    std::fs::write(&r, format!("{s1}\n{s1}\n")).unwrap();
    std::fs::write(&h, format!("{}\n{}\n", sentences["s2"].as_str().unwrap(), sentences["s3"].as_str().unwrap())).unwrap();

    let out = crashscope(&[
        "metrics-text",
        "--ref",
        p(&r),
        "--hyp",
        p(&h),
        "--lexicon",
        p(&fixtures.join("lexicon.txt")),
        "--embeddings",
        p(&fixtures.join("sentences.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let close = |v: &serde_json::Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-9;
    assert!(close(&rows[0]["bleu"], 0.4071359919668265));
    assert!(close(&rows[0]["rouge"], 28.0 / 37.0));
    assert!(close(&rows[0]["st_cosine"], 0.93));
    for key in ["bleu", "rouge", "w2v_cosine", "st_cosine"] {
        assert!(rows[0][key].as_f64() >= rows[1][key].as_f64(), "{key}");
    }

    std::fs::write(&h, "only one line\n").unwrap();
    let mismatch = crashscope(&["metrics-text", "--ref", p(&r), "--hyp", p(&h), "--lexicon", p(&fixtures.join("lexicon.txt")), "--hashed-dim", "8"]);
    assert_eq!(mismatch.status.code(), Some(1));
}
