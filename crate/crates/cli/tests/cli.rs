use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn suenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_suenet"))
        .args(args)
        .output()
        .expect("spawn suenet")
}

fn ok(args: &[&str]) -> String {
    let out = suenet(args);
    assert!(
        out.status.success(),
        "suenet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_id_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-id", "--n", "12", "--seed", "3", "--out", p(out)]);
    }
    let data_a = fs::read(a.join("dataset.jsonl")).unwrap();
    assert_eq!(data_a, fs::read(b.join("dataset.jsonl")).unwrap());
    assert!(!data_a.is_empty());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-id");
    assert!(manifest["outputs"].to_string().contains("dataset.jsonl"));
}

#[test]
fn missing_network_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.net");
    let out = suenet(&["gen-id", "--network", p(&missing), "--n", "2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.net"));
}

#[test]
fn oversized_magnitude_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-id", "--n", "4", "--out", p(&dir.path().join("id"))]);
    let out = suenet(&[
        "gen-ood",
        "--base-dataset",
        p(&dir.path().join("id").join("dataset.jsonl")),
        "--target",
        "speed",
        "--magnitude",
        "0.3",
        "--per-level",
        "2",
        "--out",
        p(&dir.path().join("ood")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_bad_levels_exit_two() {
    assert_eq!(suenet(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = suenet(&[
        "gen-ood",
        "--base-dataset",
        p(&dir.path().join("x.jsonl")),
        "--target",
        "demand",
        "--levels",
        "5..95",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn staged_commands_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    ok(&["gen-id", "--n", "40", "--seed", "1", "--out", p(&d("id"))]);
    ok(&[
        "gen-ood",
        "--base-dataset",
        p(&d("id").join("dataset.jsonl")),
        "--target",
        "capacity",
        "--levels",
        "10,50",
        "--per-level",
        "4",
        "--out",
        p(&d("ood")),
    ]);
    ok(&["prepare", "--dataset", p(&d("id").join("dataset.jsonl")), "--out", p(&d("prepared"))]);

    let config = d("small.json");
    fs::write(
        &config,
        r#"{"model": {"hidden_dim": 8, "num_layers": 2, "decoder_hidden": 8}, "train": {"batch_size": 8}}"#,
    )
    .unwrap();
    for model in ["gatedgcn", "gcn"] {
        let out = ok(&[
            "train",
            "--tensors",
            p(&d("prepared")),
            "--model",
            model,
            "--config",
            p(&config),
            "--epochs",
            "2",
            "--out",
            p(&d(model)),
        ]);
        assert!(out.contains("best validation MAE"));
        assert!(d(model).join("checkpoint.bin").exists());
    }
    let checkpoints = format!("{},{}", p(&d("gatedgcn")), p(&d("gcn")));
    ok(&["eval", "--checkpoints", &checkpoints, "--tensors", p(&d("prepared")), "--out", p(&d("eval"))]);
    let metrics = fs::read_to_string(d("eval").join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "model,mae,r2,mse,rmse");
    assert_eq!(lines.len(), 4, "{metrics}");
    assert!(d("eval").join("per_edge_mae.csv").exists());

    ok(&[
        "ood-sweep",
        "--checkpoints",
        &checkpoints,
        "--tensors",
        p(&d("prepared")),
        "--ood-dir",
        p(&d("ood")),
        "--out",
        p(&d("sweep")),
    ]);
    let curve = fs::read_to_string(d("sweep").join("ood_capacity.csv")).unwrap();
    let levels: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(levels, ["0", "10", "50"]);

    // each stage records its inputs' manifests as parents
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d("sweep").join("manifest.json")).unwrap()).unwrap();
    assert!(!manifest["parents"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_runs_end_to_end_on_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.json");
    fs::write(
        &config,
        r#"{
            "n_scenarios": 30,
            "ood_targets": ["demand"],
            "ood_levels": [10, 90],
            "ood_per_level": 3,
            "models": [{"kind": "gatedgcn", "hidden_dim": 4, "num_layers": 1, "decoder_hidden": 4}],
            "train": {"epochs": 1, "batch_size": 8}
        }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let stdout = ok(&["--jobs", "1", "pipeline", "--config", p(&config), "--out", p(&out_dir)]);
    assert!(stdout.starts_with("model,mae,r2,mse,rmse"));
    assert!(out_dir.join("eval").join("metrics.csv").exists());
    assert!(out_dir.join("ood_sweep").join("ood_demand.csv").exists());
}
