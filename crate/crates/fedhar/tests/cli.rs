//! Black-box tests of the command-line binary: artifact layout, exit codes
//! and byte-level reproducibility on a small synthetic corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedhar::checkpoint;
use fedhar::model::{init_params, Arch};
use fedhar::rng::Rng;
use fedhar::synth;

fn fedhar_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedhar"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = fedhar_bin().args(args).output().expect("spawn fedhar");
    assert!(
        out.status.success(),
        "fedhar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = fedhar_bin().args(args).output().expect("spawn fedhar");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Small raw layout plus prepared splits under `root`.
fn prepare_fixture(root: &Path) -> (String, String) {
    let uci = root.join("uci");
    synth::generate_uci_layout(&uci, [30, 28, 26, 30, 32, 30], 3).unwrap();
    let prep = root.join("prep");
    run_ok(&[
        "prepare",
        "--uci-dir",
        uci.to_str().unwrap(),
        "--out",
        prep.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    (
        uci.to_string_lossy().into_owned(),
        prep.to_string_lossy().into_owned(),
    )
}

fn reduced_checkpoint(root: &Path) -> String {
    let path = root.join("reduced.ckpt");
    let params = init_params(Arch::reduced(4, 8), &mut Rng::new(11));
    checkpoint::save(&params, &path).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_scenario(root: &Path, mode: &str, schedules: &str) -> String {
    let path = root.join(format!("{mode}.json"));
    fs::write(
        &path,
        format!(
            r#"{{
  "mode": "{mode}",
  "K": 5, "R": 2, "per_round_examples": 12,
  "hyperparams": {{ "lr": 0.01, "batch": 8, "dropout": 0.5, "epochs": 1 }},
  "schedules": {schedules},
  "seed": 13, "test_per_class": 4
}}"#
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn prepare_writes_complete_manifest_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());

    let manifest = fs::read_to_string(Path::new(&prep).join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 176); // header + windows
    assert!(manifest.starts_with("uid,subject,label,split\n"));

    // Same seed again: byte-identical split manifest.
    let prep2 = dir.path().join("prep2");
    run_ok(&[
        "prepare",
        "--uci-dir",
        dir.path().join("uci").to_str().unwrap(),
        "--out",
        prep2.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    let manifest2 = fs::read_to_string(prep2.join("manifest.csv")).unwrap();
    assert_eq!(manifest, manifest2);
}

#[test]
fn prepare_missing_file_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let uci = dir.path().join("uci");
    synth::generate_uci_layout(&uci, [4, 4, 4, 4, 4, 4], 1).unwrap();
    fs::remove_file(uci.join("train/Inertial Signals/body_gyro_y_train.txt")).unwrap();
    let (code, stderr) = run_code(&[
        "prepare",
        "--uci-dir",
        uci.to_str().unwrap(),
        "--out",
        dir.path().join("p").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("body_gyro_y_train.txt"), "{stderr}");
}

#[test]
fn train_base_zero_epochs_writes_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());
    let ckpt = dir.path().join("base.ckpt");
    run_ok(&[
        "train-base",
        "--data",
        &prep,
        "--out",
        ckpt.to_str().unwrap(),
        "--seed",
        "21",
        "--epochs",
        "0",
    ]);

    let loaded = checkpoint::load(&ckpt).unwrap();
    let expected = init_params(Arch::PAPER, &mut Rng::new(21).derive(0));
    assert_eq!(loaded, expected);

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ckpt.with_extension("metrics.json")).unwrap())
            .unwrap();
    for key in ["train", "val", "test"] {
        assert!(metrics.get(key).and_then(|v| v.as_f64()).is_some(), "{key}");
    }
}

#[test]
fn run_rejects_invalid_schedules_citing_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());
    let ckpt = reduced_checkpoint(dir.path());

    let bad_sum = small_scenario(
        dir.path(),
        "baseline",
        r#"{ "client1": [ { "classes": [1], "rounds": 1 } ] }"#,
    );
    // R=2 but rounds sum to 1
    let (code, stderr) = run_code(&[
        "run", "--scenario", &bad_sum, "--data", &prep, "--checkpoint", &ckpt, "--out",
        dir.path().join("o1").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("rounds sum 1 ≠ R=2"), "{stderr}");

    let overlap = small_scenario(
        dir.path(),
        "federated",
        r#"{
            "client1": [ { "classes": [1], "rounds": 1 }, { "classes": [1, 2], "rounds": 1 } ],
            "generalized": [ { "classes": [0,1,2,3,4,5], "rounds": 2 } ]
        }"#,
    );
    let (code, stderr) = run_code(&[
        "run", "--scenario", &overlap, "--data", &prep, "--checkpoint", &ckpt, "--out",
        dir.path().join("o2").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("C^1 ∩ C^2 ≠ ∅"), "{stderr}");
}

#[test]
fn run_baseline_emits_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());
    let ckpt = reduced_checkpoint(dir.path());
    let scenario = small_scenario(
        dir.path(),
        "baseline",
        r#"{ "client1": [ { "classes": [1], "rounds": 1 }, { "classes": [2], "rounds": 1 } ] }"#,
    );

    let out1 = dir.path().join("run1");
    run_ok(&[
        "run", "--scenario", &scenario, "--data", &prep, "--checkpoint", &ckpt, "--out",
        out1.to_str().unwrap(),
    ]);
    let accuracy = fs::read_to_string(out1.join("accuracy.csv")).unwrap();
    assert_eq!(accuracy.lines().count(), 1 + 2 * 6); // 2 steps, 1 model, 6 classes
    assert!(out1.join("provenance.csv").is_file());
    assert!(out1.join("forgetting.csv").is_file());
    assert!(out1.join("accuracy_client1.svg").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out1.join("run_manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_array().unwrap();
    for a in artifacts {
        assert!(Path::new(a.as_str().unwrap()).is_file(), "{a}");
    }

    let out2 = dir.path().join("run2");
    run_ok(&[
        "run", "--scenario", &scenario, "--data", &prep, "--checkpoint", &ckpt, "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(
        accuracy,
        fs::read_to_string(out2.join("accuracy.csv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(out1.join("provenance.csv")).unwrap(),
        fs::read_to_string(out2.join("provenance.csv")).unwrap()
    );
}

#[test]
fn run_insufficient_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());
    let ckpt = reduced_checkpoint(dir.path());
    let path = dir.path().join("hungry.json");
    fs::write(
        &path,
        r#"{
  "mode": "baseline",
  "K": 1, "R": 2, "per_round_examples": 5000,
  "hyperparams": { "lr": 0.01, "batch": 8, "dropout": 0.5, "epochs": 1 },
  "schedules": { "client1": [ { "classes": [1], "rounds": 2 } ] },
  "seed": 13, "test_per_class": 4
}"#,
    )
    .unwrap();
    let (code, stderr) = run_code(&[
        "run", "--scenario", path.to_str().unwrap(), "--data", &prep, "--checkpoint", &ckpt,
        "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 4, "{stderr}");
}

#[test]
fn project_pca_small_and_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(dir.path());
    let ckpt = reduced_checkpoint(dir.path());

    let out = dir.path().join("proj");
    run_ok(&[
        "project", "--checkpoint", &ckpt, "--data", &prep, "--method", "pca", "--per-class",
        "2", "--out", out.to_str().unwrap(), "--seed", "3",
    ]);
    let csv = fs::read_to_string(out.join("projection_pca.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    assert!(csv.starts_with("x,y,z,class\n"));
    assert!(out.join("projection_pca.svg").is_file());

    // Boundary: one example per class still beats k=3 components.
    let out_min = dir.path().join("proj-min");
    run_ok(&[
        "project", "--checkpoint", &ckpt, "--data", &prep, "--method", "pca", "--per-class",
        "1", "--out", out_min.to_str().unwrap(),
    ]);
    let csv_min = fs::read_to_string(out_min.join("projection_pca.csv")).unwrap();
    assert_eq!(csv_min.lines().count(), 1 + 6);

    let (code, _) = run_code(&[
        "project", "--checkpoint", &ckpt, "--data", &prep, "--method", "pca", "--per-class",
        "10000", "--out", dir.path().join("p2").to_str().unwrap(),
    ]);
    assert_eq!(code, 4);
}
