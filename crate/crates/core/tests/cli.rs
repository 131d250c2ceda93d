//! End-to-end runs of the `memreject` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memreject::embedding::{save_embeddings, Format};
use memreject::EmbeddingSet;
use serde_json::Value;

fn memreject(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memreject"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_set(dir: &Path, name: &str, rows: &[Vec<f32>], labels: Option<Vec<u32>>) -> PathBuf {
    let mut set = EmbeddingSet::from_rows(name, rows).unwrap();
    if let Some(l) = labels {
        set = set.with_labels(l).unwrap();
    }
    let path = dir.join(format!("{name}.emb"));
    save_embeddings(&set, &path, Format::Binary).unwrap();
    path
}

/// Points on a jittered 2-D lattice, deterministic in `offset`.
fn lattice(n: usize, offset: f32) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| {
            let t = i as f32 + offset;
            vec![(t * 0.37).sin() * 3.0 + 0.01 * t, (t * 0.61).cos() * 3.0]
        })
        .collect()
}

#[test]
fn threshold_prints_six_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("three.csv");
    std::fs::write(&p, "0\n1\n3\n").unwrap();
    let out = memreject(&["threshold", "--train", s(&p), "--metric", "euclidean"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "1.333333\n");

    let dup = dir.path().join("dup.csv");
    std::fs::write(&dup, "1,2\n1,2\n5,5\n5,5\n").unwrap();
    let out = memreject(&["threshold", "--train", s(&dup), "--metric", "euclidean"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0.000000\n");

    let labeled = dir.path().join("labeled.csv");
    std::fs::write(&labeled, "0,4\n1,4\n3,9\n").unwrap();
    let out = memreject(&["threshold", "--train", s(&labeled), "--metric", "euclidean", "--labeled"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "1.333333\n");
}

#[test]
fn hist_writes_bins_from_zero() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let r = dir.path().join("r.csv");
    std::fs::write(&q, "0.1\n-0.1\n0.3\n").unwrap();
    std::fs::write(&r, "0\n").unwrap();
    let out_path = dir.path().join("h.csv");
    let out = memreject(&[
        "hist", "--query", s(&q), "--ref", s(&r), "--metric", "euclidean", "--bin-width", "0.2", "--out",
        s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "bin_left,count");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",2") && lines[2].ends_with(",1"));

    let bad = memreject(&[
        "hist", "--query", s(&q), "--ref", s(&r), "--metric", "euclidean", "--bin-width", "0", "--out",
        s(&dir.path().join("never.csv")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!dir.path().join("never.csv").exists());
}

#[test]
fn audit_of_the_test_set_against_itself_is_neutral() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_set(dir.path(), "train", &lattice(60, 0.0), None);
    let test = write_set(dir.path(), "test", &lattice(40, 0.5), None);
    let out_path = dir.path().join("report.json");
    let out = memreject(&[
        "audit", "--train", s(&train), "--test", s(&test), "--gen", s(&test), "--metric", "euclidean", "--cells",
        "kmeans:3", "--out", s(&out_path), "--seed", "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(v["seed"], 4);
    let r = &v["references"][0];
    assert_eq!(r["ct"]["ct"].as_f64(), Some(0.0));
    assert_eq!(r["fid"]["fid"].as_f64(), Some(0.0));
    assert_eq!(r["gen_distances"], r["test_distances"]);
    assert!(r["ct"]["cells"][0]["U"].is_number());
}

#[test]
fn audit_of_copied_training_rows_is_strongly_negative() {
    let dir = tempfile::tempdir().unwrap();
    let rows = lattice(80, 0.0);
    let labels: Vec<u32> = (0..80).map(|i| (i % 4) as u32).collect();
    let train = write_set(dir.path(), "train", &rows, Some(labels.clone()));
    let gen = write_set(dir.path(), "gen", &rows[..40], Some(labels[..40].to_vec()));
    let test_rows = lattice(40, 0.5);
    let test_a = write_set(dir.path(), "test_a", &test_rows, Some((0..40).map(|i| (i % 4) as u32).collect()));
    let test_b = write_set(dir.path(), "test_b", &lattice(40, 0.25), Some((0..40).map(|i| (i % 4) as u32).collect()));
    let out_path = dir.path().join("report.json");
    let out = memreject(&[
        "audit", "--train", s(&train), "--test", &format!("{},{}", s(&test_a), s(&test_b)), "--gen", s(&gen),
        "--metric", "euclidean", "--cells", "labels", "--out", s(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(v["seed"], 0);
    let refs = v["references"].as_array().unwrap();
    assert_eq!(refs.len(), 2);
    for r in refs {
        assert!(r["ct"]["ct"].as_f64().unwrap() < -3.0, "{}", r["ct"]);
        assert_eq!(r["gen_distances"]["max"].as_f64(), Some(0.0));
    }
}

#[test]
fn audit_failures_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_set(dir.path(), "train", &lattice(20, 0.0), None);
    let test = write_set(dir.path(), "test", &lattice(20, 0.5), None);
    let out_path = dir.path().join("report.json");
    let missing = dir.path().join("missing.emb");
    let out = memreject(&[
        "audit", "--train", s(&train), "--test", s(&test), "--gen", s(&missing), "--metric", "euclidean", "--cells",
        "kmeans:2", "--out", s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!out_path.exists());

    // a dimension mismatch is caught before anything is written
    let wide = write_set(dir.path(), "wide", &[vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 0.0]], None);
    let out = memreject(&[
        "audit", "--train", s(&train), "--test", s(&test), "--gen", s(&wide), "--metric", "euclidean", "--cells",
        "kmeans:2", "--out", s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());

    let out = memreject(&[
        "audit", "--train", s(&train), "--test", s(&test), "--gen", s(&test), "--metric", "euclidean", "--cells",
        "kmeans:2", "--out", s(&test),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = memreject(&["audit", "--train", s(&train), "--metric", "manhattan"]);
    assert_eq!(out.status.code(), Some(2));

    let corrupt = dir.path().join("corrupt.emb");
    std::fs::write(&corrupt, b"EMB1\x01\x00").unwrap();
    let out = memreject(&[
        "audit", "--train", s(&train), "--test", s(&test), "--gen", s(&corrupt), "--metric", "euclidean", "--cells",
        "kmeans:2", "--out", s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
}

#[test]
fn train_with_zero_steps_writes_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = memreject(&[
        "train", "--dataset", "ring8", "--tau", "0", "--steps", "0", "--seed", "7", "--out-dir", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(out_dir.join("tau_0.log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("# seed=7 "));
    assert_eq!(lines[1], memreject::trainer::train::LOG_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("0,"));
    let state = memreject::trainer::load_checkpoint(&out_dir.join("tau_0.mrc")).unwrap();
    assert_eq!(state.step, 0);
    assert_eq!(state.config.seed, 7);
}

#[test]
fn train_sweeps_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = memreject(&[
            "train", "--dataset", "grid25", "--tau-sweep", "0,0.5dbar,0.02", "--steps", "30", "--seed", "3",
            "--out-dir", s(&out_dir), "--n-train", "100", "--n-test", "300", "--eval-every", "10",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("# seed=3 dataset=grid25"));
    assert_eq!(lines[1], "tau,final_fid,final_ct,final_mean_nn_dist");
    assert_eq!(lines.len(), 5);
    assert_eq!(summary, std::fs::read_to_string(b.join("summary.csv")).unwrap());
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn train_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    for args in [
        vec!["train", "--dataset", "ring9", "--tau", "0", "--steps", "1"],
        vec!["train", "--dataset", "ring8", "--tau", "-1", "--steps", "1"],
        vec!["train", "--dataset", "ring8", "--tau-sweep", "0,0", "--steps", "1"],
        vec!["train", "--dataset", "ring8", "--tau", "0", "--steps", "1", "--sigma", "0"],
        vec!["train", "--dataset", "ring8", "--tau", "0", "--steps", "1", "--n-train", "1"],
    ] {
        let mut args = args;
        args.extend(["--out-dir", s(&out_dir)]);
        let out = memreject(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!out_dir.exists());
}
