use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config() -> PathBuf {
    fixtures().join("relx.toml")
}

fn relx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relx"))
        .args(args)
        .env_remove("RELX_ENDPOINT")
        .env_remove("RELX_TIMEOUT_SECS")
        .output()
        .expect("binary runs")
}

fn run_in(sub: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config();
    let mut args = vec![
        sub,
        "--config",
        cfg.to_str().unwrap(),
        "--output.dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    relx(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
}

const ARTIFACTS: [&str; 8] = [
    "train.marked.tsv",
    "test.marked.tsv",
    "model.rlxb",
    "test.dists.tsv",
    "test.predictions.tsv",
    "test.report.txt",
    "test.report.jsonl",
    "run.toml",
];

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn summary(dir: &Path) -> Value {
    let text = String::from_utf8(read(dir, "test.report.jsonl")).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn pipeline_on_fixture_learns_the_relations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("pipeline", tmp.path(), &[]);
    assert_ok(&out);
    for name in ARTIFACTS {
        assert!(tmp.path().join(name).exists(), "{name} missing");
    }
    let s = summary(tmp.path());
    assert_eq!(s["record"], "summary");
    assert_eq!(s["total"], 110);
    assert!(s["micro_f1"].as_f64().unwrap() >= 0.95, "{s}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("micro f1"), "{stdout}");
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run_in("pipeline", tmp.path(), &[]));
    let first: Vec<Vec<u8>> = ARTIFACTS.iter().map(|n| read(tmp.path(), n)).collect();
    assert_ok(&run_in("pipeline", tmp.path(), &[]));
    for (name, before) in ARTIFACTS.iter().zip(&first) {
        assert_eq!(&read(tmp.path(), name), before, "{name} changed between runs");
    }
}

#[test]
fn pipeline_equals_the_individual_stages() {
    let whole = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    let extra = ["--preprocess.strategy", "wrap_entity", "--seed", "7"];
    assert_ok(&run_in("pipeline", whole.path(), &extra));
    for stage in ["preprocess", "train", "predict", "postprocess", "eval"] {
        assert_ok(&run_in(stage, staged.path(), &extra));
    }
    // run.toml records the output directory, which differs by construction.
    for name in &ARTIFACTS[..7] {
        assert_eq!(read(whole.path(), name), read(staged.path(), name), "{name} differs");
    }
}

#[test]
fn short_distribution_line_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run_in("pipeline", tmp.path(), &[]));
    let path = tmp.path().join("test.dists.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let (id, probs) = lines[2].split_once('\t').unwrap();
    let short: Vec<&str> = probs.split(' ').take(21).collect();
    lines[2] = format!("{id}\t{}", short.join(" "));
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = run_in("postprocess", tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("test.dists.tsv: line 3: expected 22 probabilities, found 21"),
        "{err}"
    );
}

#[test]
fn stats_match_the_fixture_construction() {
    let out = relx(&["stats", "--config", config().to_str().unwrap()]);
    assert_ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let sections: Vec<&str> = stdout.split("\n\n").filter(|s| !s.trim().is_empty()).collect();
    assert_eq!(sections.len(), 2);
    for (section, (name, per_class)) in sections.iter().zip([("train", 20), ("test", 5)]) {
        let mut lines = section.lines();
        assert_eq!(lines.next(), Some(format!("[{name}]").as_str()));
        let counts: Vec<(String, usize)> = lines
            .filter_map(|l| {
                let mut parts = l.split_whitespace();
                let key = parts.next()?.to_string();
                parts.next()?.parse().ok().map(|n| (key, n))
            })
            .collect();
        let labels: Vec<&(String, usize)> = counts
            .iter()
            .filter(|(k, _)| k.contains(':') || k == "no_relation")
            .collect();
        assert_eq!(labels.len(), 22);
        assert!(labels.iter().all(|(_, n)| *n == per_class), "{section}");
        let total = counts.iter().find(|(k, _)| k == "total").unwrap().1;
        assert_eq!(total, 22 * per_class);
        let pairs: usize = counts.iter().filter(|(k, _)| k.contains('-')).map(|(_, n)| n).sum();
        assert_eq!(pairs, total);
    }
}

#[test]
fn fixture_command_reproduces_the_bundled_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&relx(&["fixture", "--dir", tmp.path().to_str().unwrap()]));
    for name in ["train.jsonl", "test.jsonl"] {
        assert_eq!(read(tmp.path(), name), read(&fixtures(), name), "{name}");
    }
}

#[test]
fn invalid_records_fail_unless_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = fs::read_to_string(fixtures().join("test.jsonl")).unwrap();
    text.push_str(
        "{\"id\":\"bad\",\"text\":\"Acme in 2019.\",\"e1_start\":0,\"e1_end\":4,\"e2_start\":8,\"e2_end\":12,\
         \"e1_type\":\"org\",\"e2_type\":\"date\",\"gold\":\"pers:title:title\"}\n",
    );
    let test = tmp.path().join("test.jsonl");
    fs::write(&test, text).unwrap();
    let out_dir = tmp.path().join("out");
    let args = ["--corpus.test", test.to_str().unwrap()];

    let out = run_in("stats", &out_dir, &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("line 111: gold label implausible"),
        "{}",
        stderr(&out)
    );

    let out = run_in(
        "stats",
        &out_dir,
        &[&args[..], &["--load.skip_invalid", "true"]].concat(),
    );
    assert_ok(&out);
    assert!(stderr(&out).contains("skipped"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_are_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("stats", tmp.path(), &["--corpus.train", "/nonexistent/train.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in("predict", tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("test.marked.tsv"), "{}", stderr(&out));
}

#[test]
fn bad_configuration_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in("pipeline", tmp.path(), &["--training.epochs", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in("pipeline", tmp.path(), &["--backend.kind", "remote"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("RELX_ENDPOINT"), "{}", stderr(&out));
    let out = relx(&["eval", "--no-such-flag", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

/// Serves uniform distributions, or HTTP 500 when `fail` is set.
fn mock_server(fail: bool) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        let labels: Vec<String> = relx::build_default_schema()
            .label_names()
            .into_iter()
            .map(String::from)
            .collect();
        for mut req in server.incoming_requests() {
            let body: Value = serde_json::from_reader(req.as_reader()).unwrap();
            let n = body["texts"].as_array().unwrap().len();
            let reply = if fail {
                tiny_http::Response::from_string("overloaded").with_status_code(500)
            } else {
                let probs = vec![vec![1.0 / 22.0; 22]; n];
                tiny_http::Response::from_string(serde_json::json!({ "probs": probs, "labels": labels }).to_string())
            };
            let _ = req.respond(reply);
        }
    });
    endpoint
}

#[test]
fn remote_backend_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let endpoint = mock_server(false);
    let cfg = config();
    let out = Command::new(env!("CARGO_BIN_EXE_relx"))
        .args([
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--output.dir",
            tmp.path().to_str().unwrap(),
        ])
        .args(["--backend.kind", "remote", "--backend.batch_size", "16"])
        .env("RELX_ENDPOINT", &endpoint)
        .env("RELX_TIMEOUT_SECS", "5")
        .output()
        .unwrap();
    assert_ok(&out);
    let finetune = String::from_utf8(read(tmp.path(), "finetune.tsv")).unwrap();
    assert_eq!(finetune.lines().count(), 440);
    assert!(finetune.lines().all(|l| l.split('\t').count() == 4));
    let job: Value = serde_json::from_slice(&read(tmp.path(), "finetune.json")).unwrap();
    assert_eq!(job["learning_rate"], 1e-5);
    assert_eq!(job["epochs"], 3);
    assert_eq!(job["optimizer"], "adam");
    assert_eq!(job["labels"].as_array().unwrap().len(), 22);
    // A uniform distribution falls back to the first plausible label of
    // every pair, so every prediction is a correction or lands on label 0.
    let preds = String::from_utf8(read(tmp.path(), "test.predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 110);
    assert!(preds.lines().all(|l| {
        let cols: Vec<&str> = l.split('\t').collect();
        cols[1] == "org:org:agreement_with" && (cols[3] != "0") == (cols[2] != cols[1])
    }));

    let failing = mock_server(true);
    let out = run_in(
        "predict",
        tmp.path(),
        &["--backend.kind", "remote", "--backend.endpoint", &failing],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("500"), "{}", stderr(&out));
}
