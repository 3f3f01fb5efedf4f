//! End-to-end checks of the command-line surface: subcommands, exit codes,
//! the machine-readable error JSON, and the service-URL environment override.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_defectforge"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let output = bin().args(args).current_dir(dir).output().expect("spawn");
    assert!(
        output.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn full_cli_workflow_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // A small config keeps this fast.
    let config = serde_json::json!({
        "strategies": {
            "train_normals": 12,
            "eval_normals": 8,
            "eval_anomalies": 8,
            "pretrain_size": 30,
            "finetune_size": 6
        },
        "detector": { "pretrain": { "epochs": 2 } }
    });
    std::fs::write(root.join("config.json"), config.to_string()).unwrap();

    run_ok(
        &["--config", "config.json", "toy-bench", "--out", "bench", "--seed", "5"],
        root,
    );
    assert!(root.join("bench/normals/manifest.json").exists());
    assert!(root.join("bench/eval/manifest.json").exists());

    run_ok(
        &[
            "--config", "config.json",
            "synth-rule",
            "--normals", "bench/normals/manifest.json",
            "--out", "rule",
            "--count", "30",
            "--seed", "5",
        ],
        root,
    );

    let gen_out = run_ok(
        &[
            "--config", "config.json",
            "synth-gen",
            "--normals", "bench/normals/manifest.json",
            "--out", "gen",
            "--accept", "6",
            "--seed", "5",
            "--endpoint", "mock:local-edit",
        ],
        root,
    );
    let gen_json: serde_json::Value =
        serde_json::from_slice(&gen_out.stdout).expect("synth-gen prints JSON");
    assert_eq!(gen_json["stats"]["accepted"], 6);

    // Gate a generated candidate against its own source normal.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("gen/manifest.json")).unwrap())
            .unwrap();
    let image_path = manifest["entries"][0]["image_path"].as_str().unwrap();
    let source_rel = manifest["entries"][0]["source_normal_path"].as_str().unwrap();
    let source_path = root.join("gen").join(source_rel);
    let filter_out = run_ok(
        &[
            "filter",
            "--normal",
            source_path.to_str().unwrap(),
            "--candidate",
            &format!("gen/{image_path}"),
        ],
        root,
    );
    let report: serde_json::Value = serde_json::from_slice(&filter_out.stdout).unwrap();
    assert_eq!(report["decision"], "Desired");

    run_ok(
        &[
            "--config", "config.json",
            "train",
            "--dataset", "rule/manifest.json",
            "--model-out", "model.dfae",
            "--stage", "single",
            "--seed", "5",
            "--epochs", "2",
        ],
        root,
    );
    assert!(root.join("model.dfae").exists());

    let eval_out = run_ok(
        &[
            "--config", "config.json",
            "eval",
            "--model", "model.dfae",
            "--eval", "bench/eval/manifest.json",
            "--scores-out", "scores.json",
        ],
        root,
    );
    let eval_json: serde_json::Value = serde_json::from_slice(&eval_out.stdout).unwrap();
    let auroc = eval_json["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    assert!(root.join("scores.json").exists());

    run_ok(
        &[
            "--config", "config.json",
            "strategy",
            "--plan", "e",
            "--rule", "rule/manifest.json",
            "--gen", "gen/manifest.json",
            "--eval", "bench/eval/manifest.json",
            "--out", "strategies",
            "--seed", "5",
        ],
        root,
    );
    assert!(root.join("strategies/strategy_e.json").exists());
    assert!(root.join("strategies/scores_e.json").exists());

    run_ok(
        &[
            "report",
            "--strategies", "strategies",
            "--out", "report",
            "--gen", "gen",
        ],
        root,
    );
    let table = std::fs::read_to_string(root.join("report/strategy_table.txt")).unwrap();
    assert!(table.lines().count() >= 3);
    assert!(root.join("report/strategy_table.json").exists());
    assert!(root.join("report/loss_curves.json").exists());
    // At least one montage from the generation run's decisions.
    let montages = std::fs::read_dir(root.join("report/montages")).unwrap().count();
    assert!(montages > 0, "no montages rendered");
}

#[test]
fn errors_are_machine_readable_json() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["synth-rule", "--normals", "missing/manifest.json", "--out", "x"])
        .current_dir(dir.path())
        .output()
        .expect("spawn");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr is a JSON object");
    assert!(parsed["error"]["kind"].is_string());
    assert!(parsed["error"]["message"].is_string());
}

#[test]
fn env_var_overrides_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = serde_json::json!({
        "strategies": { "train_normals": 6, "eval_normals": 2, "eval_anomalies": 2 },
        "genclient": { "endpoint": "http://127.0.0.1:1/unreachable" }
    });
    std::fs::write(root.join("config.json"), config.to_string()).unwrap();
    run_ok(
        &["--config", "config.json", "toy-bench", "--out", "bench", "--seed", "1"],
        root,
    );
    // The env var must win over the dead endpoint in the config.
    let output = bin()
        .args([
            "--config", "config.json",
            "synth-gen",
            "--normals", "bench/normals/manifest.json",
            "--out", "gen",
            "--accept", "2",
            "--seed", "1",
        ])
        .env("DEFECTFORGE_SERVICE_URL", "mock:identity")
        .current_dir(root)
        .output()
        .expect("spawn");
    // Identity mock cannot satisfy any acceptance target, so the command
    // fails with AcceptanceExhausted; reaching that error proves the mock
    // endpoint from the environment was used.
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(parsed["error"]["kind"], "acceptance_exhausted");
}

#[test]
fn filter_subcommand_classifies_identity() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run_ok(&["toy-bench", "--out", "bench", "--seed", "2"], root);
    let img = "bench/normals/images/normal_0000.png";
    let output = run_ok(&["filter", "--normal", img, "--candidate", img], root);
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["decision"], "NoAnomaly");
    assert_eq!(report["ratio"], 1.0);
}
