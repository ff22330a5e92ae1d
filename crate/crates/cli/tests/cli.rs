use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use sightaid_core::network::{build_network, save_weights, Network, NetworkConfig};
use tempfile::TempDir;

fn sightaid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sightaid"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_lines(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone()).unwrap().lines().map(str::to_string).collect()
}

/// Every line on stderr that is a JSON object is an error report; return them.
fn error_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).expect("error lines are JSON"))
        .collect()
}

fn write_weights(path: &Path, net: &Network<f32>) {
    let mut bytes = Vec::new();
    save_weights(net, &mut bytes).unwrap();
    fs::write(path, bytes).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn shapes(&self, name: &str, count: usize, max_objects: usize) -> PathBuf {
        let dir = self.path(name);
        let out = sightaid(&[
            "generate-shapes",
            s(&dir),
            "--count",
            &count.to_string(),
            "--seed",
            "5",
            "--max-objects",
            &max_objects.to_string(),
        ]);
        assert!(out.status.success());
        dir
    }

    fn config(&self, name: &str, json: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, json).unwrap();
        path
    }

    /// Toy detector pipeline with seeded weights next to it.
    fn seeded_detector(&self, conf: f64) -> PathBuf {
        let net = build_network::<f32>(&NetworkConfig::named("toy-detector").unwrap(), 3).unwrap();
        write_weights(&self.path("det.weights"), &net);
        self.config(
            "det.json",
            &format!(r#"{{"network":"toy-detector","weights":"det.weights","conf_threshold":{conf}}}"#),
        )
    }
}

#[test]
fn detect_emits_one_json_line_per_frame() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 2, 2);
    let cfg = fx.seeded_detector(0.0);
    let out = sightaid(&["detect", s(&data.join("frame_0000.ppm")), "--config", s(&cfg)]);
    assert!(out.status.success());
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(v["frame_id"], "frame_0000");
    assert_eq!(v["model"], "toy-detector");
}

#[test]
fn detect_continues_past_unreadable_file() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 2, 1);
    let cfg = fx.seeded_detector(0.5);
    let bad = fx.path("broken.ppm");
    fs::write(&bad, b"P6\n4 4\n255\nshort").unwrap();
    let out = sightaid(&[
        "detect",
        s(&data.join("frame_0000.ppm")),
        s(&bad),
        s(&data.join("frame_0001.ppm")),
        "--config",
        s(&cfg),
        "--out",
        "phrase",
    ]);
    assert!(!out.status.success());
    assert_eq!(stdout_lines(&out).len(), 2);
    let errors = error_lines(&out);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["error"], "decode");
    assert_eq!(errors[0]["file"], s(&bad));
}

#[test]
fn zero_weights_recognize_nothing() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 1, 3);
    let net = Network::<f32>::zeroed(&NetworkConfig::named("toy-detector").unwrap()).unwrap();
    write_weights(&fx.path("zero.weights"), &net);
    let cfg = fx.config("zero.json", r#"{"network":"toy-detector","weights":"zero.weights","conf_threshold":0.6}"#);
    let out = sightaid(&[
        "detect",
        s(&data.join("frame_0000.ppm")),
        "--config",
        s(&cfg),
        "--out",
        "phrase",
        "--out",
        "braille",
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_lines(&out), ["nothing recognized", "⠝⠕⠞⠓⠊⠝⠛⠀⠗⠑⠉⠕⠛⠝⠊⠵⠑⠙"]);
}

#[test]
fn weights_for_another_network_are_rejected() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 1, 1);
    let net = build_network::<f32>(&NetworkConfig::named("toy-classifier").unwrap(), 1).unwrap();
    write_weights(&fx.path("cls.weights"), &net);
    let cfg = fx.config("c.json", r#"{"network":"toy-detector","weights":"cls.weights"}"#);
    let out = sightaid(&["detect", s(&data.join("frame_0000.ppm")), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "weights");
}

#[test]
fn generate_shapes_is_deterministic() {
    let fx = Fixture::new();
    let a = fx.shapes("a", 10, 3);
    let b = fx.shapes("b", 10, 3);
    let listing = |d: &Path| {
        let mut names: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        names
    };
    assert_eq!(listing(&a), listing(&b));
    assert_eq!(listing(&a).len(), 11);
    for name in listing(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn generate_shapes_rejects_zero_count() {
    let fx = Fixture::new();
    let out = sightaid(&["generate-shapes", s(&fx.path("x")), "--count", "0"]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-input");
}

fn train_config(fx: &Fixture, lr: f64) -> PathBuf {
    fx.config(
        "train.json",
        &format!(
            r#"{{"network":"toy-classifier","train":{{"mode":"classifier","learning_rate":{lr},"epochs":2,"batch_size":4,"seed":3,"init_seed":1}}}}"#
        ),
    )
}

#[test]
fn train_rejects_zero_learning_rate() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 4, 1);
    let cfg = train_config(&fx, 0.0);
    let out = sightaid(&["train-toy", s(&data), "--config", s(&cfg), "--weights", s(&fx.path("w"))]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-hyperparameter");
    assert!(!fx.path("w").exists());
}

#[test]
fn train_is_deterministic_and_logs_epochs() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 12, 1);
    let cfg = train_config(&fx, 0.05);
    let run = |name: &str| {
        let out = sightaid(&["train-toy", s(&data), "--config", s(&cfg), "--weights", s(&fx.path(name))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out
    };
    let first = run("w1");
    run("w2");
    assert_eq!(fs::read(fx.path("w1")).unwrap(), fs::read(fx.path("w2")).unwrap());
    let log = String::from_utf8_lossy(&first.stderr);
    assert!(log.contains("epoch 1 loss") && log.contains("epoch 2 loss"));
    let metrics: serde_json::Value = serde_json::from_str(&stdout_lines(&first)[0]).unwrap();
    assert!(metrics["final_loss"].as_f64().unwrap() <= metrics["initial_loss"].as_f64().unwrap());
    assert!(metrics["train_top1"].is_number());
}

#[test]
fn train_validates_dataset_first() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 3, 1);
    fs::remove_file(data.join("frame_0001.ppm")).unwrap();
    let cfg = train_config(&fx, 0.05);
    let out = sightaid(&["train-toy", s(&data), "--config", s(&cfg), "--weights", s(&fx.path("w"))]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-annotation");
    assert!(!String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn train_mode_must_match_head() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 3, 1);
    let cfg = fx.config(
        "bad.json",
        r#"{"network":"toy-detector","train":{"mode":"classifier","learning_rate":0.1,"epochs":1,"batch_size":1}}"#,
    );
    let out = sightaid(&["train-toy", s(&data), "--config", s(&cfg), "--weights", s(&fx.path("w"))]);
    assert_eq!(error_lines(&out)[0]["error"], "invalid-config");
}

#[test]
fn eval_offline_matches_online() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 8, 2);
    let cfg = fx.seeded_detector(0.01);
    let dump = fx.path("dump.jsonl");
    let online = sightaid(&["eval", s(&data), "--config", s(&cfg), "--dump", s(&dump)]);
    assert!(online.status.success(), "{}", String::from_utf8_lossy(&online.stderr));
    let offline = sightaid(&["eval", s(&data), "--config", s(&cfg), "--detections", s(&dump)]);
    assert!(offline.status.success());
    assert_eq!(online.stdout, offline.stdout);
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 8);
}

#[test]
fn eval_truth_as_detections_scores_one() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 6, 3);
    let labels = ["square", "disk", "triangle"];
    let annotations = fs::read_to_string(data.join("annotations.txt")).unwrap();
    let mut per_frame: Vec<(String, Vec<String>)> = Vec::new();
    for line in annotations.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let det = format!(
            r#"{{"label":"{}","confidence":1.0,"box":{{"cx":{},"cy":{},"w":{},"h":{}}}}}"#,
            labels[f[1].parse::<usize>().unwrap()],
            f[2],
            f[3],
            f[4],
            f[5]
        );
        match per_frame.iter_mut().find(|(id, _)| id == f[0]) {
            Some((_, dets)) => dets.push(det),
            None => per_frame.push((f[0].to_string(), vec![det])),
        }
    }
    let jsonl: String = per_frame
        .iter()
        .map(|(id, dets)| {
            format!(
                "{{\"frame_id\":\"{id}\",\"model\":\"toy-detector\",\"width\":64,\"height\":64,\"detections\":[{}]}}\n",
                dets.join(",")
            )
        })
        .collect();
    let dets = fx.path("truth.jsonl");
    fs::write(&dets, jsonl).unwrap();
    let cfg = fx.config("t.json", r#"{"network":"toy-detector"}"#);
    let out = sightaid(&["eval", s(&data), "--config", s(&cfg), "--detections", s(&dets)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout_lines(&out)[0]).unwrap();
    assert_eq!(report["map"].as_f64(), Some(1.0));
    assert_eq!(report["top1"], serde_json::Value::Null);
}

#[test]
fn eval_random_weights_score_low() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 20, 3);
    let cfg = fx.seeded_detector(0.05);
    let out = sightaid(&["eval", s(&data), "--config", s(&cfg)]);
    let report: serde_json::Value = serde_json::from_str(&stdout_lines(&out)[0]).unwrap();
    assert!(report["map"].as_f64().unwrap() < 0.2, "{report}");
}

#[test]
fn eval_requires_annotations() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 2, 1);
    fs::remove_file(data.join("annotations.txt")).unwrap();
    let cfg = fx.seeded_detector(0.1);
    let out = sightaid(&["eval", s(&data), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-input");
}

#[test]
fn bench_single_iteration() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 1, 1);
    let cfg = fx.seeded_detector(0.25);
    let out = sightaid(&["bench", s(&data.join("frame_0000.ppm")), "--config", s(&cfg), "--iterations", "1"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_lines(&out)[0]).unwrap();
    assert_eq!(report["iterations"], 1);
    for stage in ["decode", "resize", "forward", "postprocess", "output"] {
        let mean = report[stage]["mean_ms"].as_f64().unwrap();
        assert_eq!(Some(mean), report[stage]["p95_ms"].as_f64());
    }
    let zero = sightaid(&["bench", s(&data.join("frame_0000.ppm")), "--config", s(&cfg), "--iterations", "0"]);
    assert!(!zero.status.success());
}

#[test]
fn bad_flags_fail_with_error_line() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 1, 1);
    let cfg = fx.seeded_detector(0.25);
    let out = sightaid(&["detect", s(&data.join("frame_0000.ppm")), "--config", s(&cfg), "--conf", "2"]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-hyperparameter");
    let out = sightaid(&["detect", "x.ppm", "--config", s(&fx.path("missing.json"))]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out).len(), 1);
}

fn watch(dir: &Path, cfg: &Path, extra: &[&str]) -> std::process::Child {
    Command::new(env!("CARGO_BIN_EXE_sightaid"))
        .args(["watch", s(dir), "--config", s(cfg), "--poll-ms", "20", "--out", "json"])
        .args(extra)
        .env("RUST_LOG", "info")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn wait_with_deadline(child: &mut std::process::Child, deadline: Duration) -> bool {
    let start = Instant::now();
    while start.elapsed() < deadline {
        if child.try_wait().unwrap().is_some() {
            return true;
        }
        thread::sleep(Duration::from_millis(20));
    }
    let _ = child.kill();
    false
}

#[test]
fn watch_emits_in_filename_order_and_skips_corrupt() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 3, 2);
    let cfg = fx.seeded_detector(0.5);
    let live = fx.path("live");
    fs::create_dir(&live).unwrap();
    // Written in reverse name order; output must still follow names.
    fs::copy(data.join("frame_0002.ppm"), live.join("c.ppm")).unwrap();
    fs::write(live.join("b.ppm"), b"not an image").unwrap();
    fs::copy(data.join("frame_0001.ppm"), live.join("a0.ppm")).unwrap();
    fs::copy(data.join("frame_0000.ppm"), live.join("a1.ppm")).unwrap();
    let mut child = watch(&live, &cfg, &["--max-frames", "4"]);
    assert!(wait_with_deadline(&mut child, Duration::from_secs(30)), "watch did not finish");
    let mut stdout = String::new();
    child.stdout.take().unwrap().read_to_string(&mut stdout).unwrap();
    let mut stderr = String::new();
    child.stderr.take().unwrap().read_to_string(&mut stderr).unwrap();
    let ids: Vec<String> = stdout
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["frame_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["a0", "a1", "c"]);
    assert_eq!(stderr.matches("skipped frame b").count(), 1);
    assert_eq!(stderr.matches("latency").count(), 3);
}

#[test]
fn watch_picks_up_frames_that_appear_later() {
    let fx = Fixture::new();
    let data = fx.shapes("d", 2, 1);
    let cfg = fx.seeded_detector(0.5);
    let live = fx.path("live");
    fs::create_dir(&live).unwrap();
    let mut child = watch(&live, &cfg, &["--max-frames", "2"]);
    for (src, name) in [("frame_0001.ppm", "x.ppm"), ("frame_0000.ppm", "y.ppm")] {
        thread::sleep(Duration::from_millis(300));
        fs::copy(data.join(src), live.join(name)).unwrap();
    }
    assert!(wait_with_deadline(&mut child, Duration::from_secs(30)), "watch did not finish");
    let mut stdout = String::new();
    child.stdout.take().unwrap().read_to_string(&mut stdout).unwrap();
    let ids: Vec<&str> = stdout.lines().map(|l| if l.contains("\"x\"") { "x" } else { "y" }).collect();
    assert_eq!(ids, ["x", "y"]);
}

#[test]
fn watch_empty_directory_stays_alive() {
    let fx = Fixture::new();
    let cfg = fx.seeded_detector(0.5);
    let live = fx.path("live");
    fs::create_dir(&live).unwrap();
    let mut child = watch(&live, &cfg, &[]);
    thread::sleep(Duration::from_millis(500));
    assert!(child.try_wait().unwrap().is_none());
    child.kill().unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.stdout.is_empty());
}

#[test]
fn watch_requires_directory() {
    let fx = Fixture::new();
    let cfg = fx.seeded_detector(0.5);
    let out = sightaid(&["watch", s(&fx.path("nope")), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert_eq!(error_lines(&out)[0]["error"], "invalid-input");
}
