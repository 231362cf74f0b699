//! End-to-end checks of the `combo` binary.

use std::path::Path;
use std::process::{Command, Output};

fn combo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_combo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn combo")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{
            "version": 1,
            "n": 6,
            "dim": 12,
            "segments": 3,
            "replicas": 2,
            "mode": "combo",
            "rounds": 6,
            "seed": 42,
            "sgd": { "alpha": 0.1, "batch_size": 16, "tau": 5 },
            "task": { "kind": "quadratic", "mu": 1.0, "l": 4.0 },
            "target": { "metric": "suboptimality", "value": 1.0 }
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn pipeline_is_deterministic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut blobs: Vec<Vec<u8>> = Vec::new();
    for pass in ["a", "b"] {
        let d = dir.path().join(pass);
        std::fs::create_dir_all(&d).unwrap();
        let cfg = write_config(&d);

        let out = combo(&["run", cfg.to_str().unwrap()], &d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let trace = d.join("run.trace.jsonl");
        assert!(trace.exists());

        let out = combo(&["attach-times", trace.to_str().unwrap()], &d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let timeline = d.join("run.timeline.jsonl");
        assert!(timeline.exists());

        let out = combo(
            &["report", timeline.to_str().unwrap(), "--out-dir", "report"],
            &d,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

        let mut blob = Vec::new();
        for f in [
            trace.clone(),
            timeline.clone(),
            d.join("report/curves.csv"),
            d.join("report/time_to_target.csv"),
        ] {
            blob.extend(std::fs::read(&f).unwrap());
            blob.push(0);
        }
        blobs.push(blob);
    }
    assert_eq!(blobs[0], blobs[1], "pipeline output differs between runs");
}

#[test]
fn sweep_produces_per_value_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = combo(
        &[
            "sweep",
            cfg.to_str().unwrap(),
            "--vary",
            "S=1,3",
            "--out-dir",
            "sweep",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "S_1.trace.jsonl",
        "S_1.timeline.jsonl",
        "S_3.trace.jsonl",
        "S_3.timeline.jsonl",
        "curves.csv",
        "sync_time_vs_s.csv",
    ] {
        assert!(
            dir.path().join("sweep").join(name).exists(),
            "missing sweep artifact {name}"
        );
    }
}

#[test]
fn bad_config_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    // replicas exceed the peer count: rejected by validation
    std::fs::write(
        &cfg,
        r#"{
            "version": 1,
            "n": 3,
            "dim": 8,
            "segments": 2,
            "replicas": 5,
            "mode": "combo",
            "rounds": 2,
            "seed": 1,
            "task": { "kind": "quadratic" }
        }"#,
    )
    .unwrap();
    let out = combo(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "no diagnostic on stderr: {stderr}");
}

#[test]
fn missing_file_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = combo(&["run", "no-such-config.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
