use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const TINY_MODEL: &str =
    r#"model={"arch":"resmixnet","experts":2,"depth":1,"stem_channels":4,"stage_channels":[4,4,8]}"#;

fn resmix(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resmix"))
        .args(args)
        .env("RESMIX_OUT_ROOT", root)
        .env_remove("RESMIX_MNIST_DIR")
        .current_dir(root)
        .output()
        .expect("spawn resmix")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn mnist_dir() -> Option<PathBuf> {
    let d = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    d.join("train-images-idx3-ubyte").exists().then_some(d)
}

/// Tiny Pentomino splits (16×16, 2×2 grid) in `<root>/data`.
fn tiny_pentomino(root: &Path, count: &str) -> PathBuf {
    let out = root.join("data");
    let o = resmix(
        root,
        &[
            "gen",
            "--dataset",
            "pentomino",
            "--count",
            count,
            "--seed",
            "3",
            "--set",
            "image_size=16",
            "--set",
            "grid=2",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn params_prints_counts_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = resmix(dir.path(), &["params", "--model", "resmixnet", "--experts", "4", "--depth", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("191,002"), "{}", stdout(&o));

    let o = resmix(dir.path(), &["params", "--model", "resnet", "--depth", "26", "--json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 369_170);

    let o = resmix(dir.path(), &["params", "--model", "resmixnet", "--experts", "8", "--depth", "4"]);
    assert_eq!(code(&o), 2, "over-budget model must be rejected");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&resmix(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&resmix(dir.path(), &["gen", "--dataset", "cifar"])), 1);
    assert_eq!(code(&resmix(dir.path(), &["train", "--preset", "no-such-preset"])), 1);
    assert_eq!(code(&resmix(dir.path(), &["--help"])), 0);
}

#[test]
fn gen_writes_audited_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pentomino(dir.path(), "40");
    for s in ["train", "val", "test"] {
        assert!(data.join(format!("{s}.rmxd")).exists());
    }
    let audits = read_json(&data.join("audit.json"));
    let audits = audits.as_array().unwrap();
    assert_eq!(audits.len(), 3);
    assert!(audits.iter().all(|a| a["passed"] == true && a["samples"] == 40));
    let resolved = read_json(&data.join("config.resolved.json"));
    assert_eq!(resolved["command"], "gen");
    assert_eq!(resolved["config"]["image_size"], 16);
    assert_eq!(resolved["datasets"].as_array().unwrap().len(), 3);

    let again = resmix(
        dir.path(),
        &[
            "gen",
            "--dataset",
            "pentomino",
            "--count",
            "40",
            "--seed",
            "3",
            "--set",
            "image_size=16",
            "--set",
            "grid=2",
            "--splits",
            "val",
        ],
    );
    assert_eq!(code(&again), 0);
    let run_dir = PathBuf::from(stdout(&again).lines().last().unwrap());
    assert_eq!(std::fs::read(run_dir.join("val.rmxd")).unwrap(), std::fs::read(data.join("val.rmxd")).unwrap());
    assert!(!run_dir.join("train.rmxd").exists());
}

#[test]
fn gen_rejects_unknown_keys_and_occupied_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = resmix(dir.path(), &["gen", "--dataset", "pentomino", "--set", "no_such_key=1"]);
    assert_eq!(code(&o), 2);
    let occupied = dir.path().join("occupied");
    std::fs::create_dir(&occupied).unwrap();
    std::fs::write(occupied.join("x"), b"x").unwrap();
    let o = resmix(dir.path(), &["gen", "--dataset", "pentomino", "--count", "8", "--out", occupied.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}

#[test]
fn fetch_verifies_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("payload.bin");
    std::fs::write(&src, b"resmix fetch payload").unwrap();
    let sha = hex::encode(Sha256::digest(b"resmix fetch payload"));
    let url = format!("file://{}", src.display());
    let dest = dir.path().join("dest");
    let dest_s = dest.to_str().unwrap();

    let o = resmix(dir.path(), &["fetch", "--url", &url, "--sha256", &sha, "--dest", dest_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("downloaded and verified"));
    assert_eq!(std::fs::read(dest.join("payload.bin")).unwrap(), b"resmix fetch payload");

    let o = resmix(dir.path(), &["fetch", "--url", &url, "--sha256", &sha, "--dest", dest_s]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("already verified"));

    let wrong = "0".repeat(64);
    let other = dir.path().join("other");
    let o = resmix(dir.path(), &["fetch", "--url", &url, "--sha256", &wrong, "--dest", other.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!other.join("payload.bin").exists(), "mismatched download must be removed");
}

#[test]
fn train_eval_resume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pentomino(dir.path(), "32");
    let data_s = data.to_str().unwrap();
    let common = ["--data-dir", data_s, "--set", TINY_MODEL, "--set", "batch_size=8", "--set", "lr_milestones=[]"];

    let full = dir.path().join("full");
    let mut args = vec!["train", "--set", "epochs=2", "--out", full.to_str().unwrap()];
    args.extend(common);
    let o = resmix(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test error"));
    let summary = read_json(&full.join("summary.json"));
    assert_eq!(summary["epochs_run"], 2);
    let resolved = read_json(&full.join("config.resolved.json"));
    assert_eq!(resolved["config"]["batch_size"], 8);
    assert_eq!(resolved["datasets"].as_array().unwrap().len(), 3);

    let half = dir.path().join("half");
    let mut args = vec!["train", "--set", "epochs=1", "--out", half.to_str().unwrap()];
    args.extend(common);
    assert_eq!(code(&resmix(dir.path(), &args)), 0);

    // Extending a one-epoch run to two epochs must match the uninterrupted run.
    let ckpt = half.join("last.ckpt");
    let patched = dir.path().join("patched.ckpt");
    {
        let cfg = resmix::train::load_checkpoint(&ckpt).unwrap();
        let mut t = cfg;
        t.cfg.epochs = 2;
        resmix::train::save_checkpoint(&t, &patched).unwrap();
    }
    let resumed = dir.path().join("resumed");
    let o = resmix(dir.path(), &["train", "--resume", patched.to_str().unwrap(), "--out", resumed.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = |d: &Path| std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    let strip = |s: String| -> Vec<String> {
        s.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string()).collect()
    };
    assert_eq!(strip(metrics(&full)), strip(metrics(&resumed)));

    let eval = dir.path().join("eval");
    let o = resmix(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            full.join("last.ckpt").to_str().unwrap(),
            "--data",
            data.join("test.rmxd").to_str().unwrap(),
            "--out",
            eval.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ev = read_json(&eval.join("summary.json"));
    assert_eq!(ev["samples"], 32);
    let preds = std::fs::read_to_string(eval.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 33);
    assert!(eval.join("gates.csv").exists());

    let curves = resmix(dir.path(), &["export-curves", "--metrics", full.join("metrics.csv").to_str().unwrap()]);
    assert_eq!(code(&curves), 0);
    assert_eq!(stdout(&curves).lines().count(), 3);

    let png = dir.path().join("png");
    let o = resmix(
        dir.path(),
        &[
            "export-png",
            "--data",
            data.join("val.rmxd").to_str().unwrap(),
            "--count",
            "3",
            "--out",
            png.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_dir(&png)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count(),
        3
    );
}

#[test]
fn train_rejects_swapped_splits_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pentomino(dir.path(), "16");
    let val = data.join("val.rmxd");
    let set_train = format!("data.train={:?}", val.to_str().unwrap());
    let o = resmix(dir.path(), &["train", "--set", &set_train, "--set", TINY_MODEL, "--set", "epochs=1"]);
    assert_eq!(code(&o), 2, "a val file in the train slot must fail the audit gate");

    let o = resmix(dir.path(), &["train", "--data-dir", data.to_str().unwrap(), "--set", "momentum_typo=0.5"]);
    assert_eq!(code(&o), 2);
    let o = resmix(dir.path(), &["train", "--data-dir", data.to_str().unwrap(), "--set", "batch_size=0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn preset_learning_rate_reaches_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pentomino(dir.path(), "16");
    let out = dir.path().join("run");
    let o = resmix(
        dir.path(),
        &[
            "train",
            "--preset",
            "table3-resmix41-pentomino",
            "--data-dir",
            data.to_str().unwrap(),
            "--set",
            TINY_MODEL,
            "--set",
            "epochs=1",
            "--set",
            "batch_size=8",
            "--set",
            "lr_milestones=[]",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = read_json(&out.join("config.resolved.json"));
    assert_eq!(resolved["config"]["learning_rate"], 0.01);
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pentomino(dir.path(), "16");
    let out = dir.path().join("sweep");
    let o = resmix(
        dir.path(),
        &[
            "sweep",
            "--data-dir",
            data.to_str().unwrap(),
            "--set",
            TINY_MODEL,
            "--set",
            "epochs=1",
            "--set",
            "batch_size=8",
            "--set",
            "lr_milestones=[]",
            "--lrs",
            "0.1,0.01",
            "--seeds",
            "0,1",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("sweep.json"));
    assert_eq!(s["cells"].as_array().unwrap().len(), 4);
    assert!(std::fs::read_to_string(out.join("table.md")).unwrap().contains('±'));
}

#[test]
fn mnist_parity_gen_needs_pools() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = resmix(
        dir.path(),
        &["gen", "--dataset", "mnist-parity", "--count", "8", "--mnist-dir", missing.to_str().unwrap()],
    );
    assert_ne!(code(&o), 0);

    let Some(mnist) = mnist_dir() else {
        eprintln!("MNIST IDX files not present; generation half of this test not exercised");
        return;
    };
    let out = dir.path().join("mp");
    let o = resmix(
        dir.path(),
        &[
            "gen",
            "--dataset",
            "mnist-parity",
            "--count",
            "20",
            "--mnist-dir",
            mnist.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let audits = read_json(&out.join("audit.json"));
    assert!(audits.as_array().unwrap().iter().all(|a| a["passed"] == true));
}
