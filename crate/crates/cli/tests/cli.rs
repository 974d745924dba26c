use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_RUN: &str = r#"
[data]
window_days = 3

[model]
lstm_layer_sizes = [6, 8, 6]
attention_size = 8
fc_sizes = [8, 2]

[train]
epochs = 2
batch_size = 32
patience = 2

[cross_val]
rounds = 2

[synthetic]
vehicles = 6
days = 60
"#;

fn tripcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tripcast"))
        .current_dir(dir)
        .env_remove("TRIPCAST_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tripcast(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A temp dir holding `run.toml` and a generated `trips.csv`.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL_RUN).unwrap();
    ok(
        dir.path(),
        &["gen-data", "--config", "run.toml", "--seed", "0", "--out", "trips.csv"],
    );
    let root = dir.path().to_path_buf();
    (dir, root)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn value_after(stdout: &str, label: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(label)).expect("label printed");
    line[label.len()..].trim().trim_end_matches('%').parse().unwrap()
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen-data",
            "--seed",
            "0",
            "--vehicles",
            "3",
            "--days",
            "30",
            "--out",
            "a.csv",
        ],
    );
    ok(
        dir.path(),
        &[
            "gen-data",
            "--seed",
            "0",
            "--vehicles",
            "3",
            "--days",
            "30",
            "--out",
            "b.csv",
        ],
    );
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    ok(
        dir.path(),
        &[
            "gen-data",
            "--seed",
            "1",
            "--vehicles",
            "3",
            "--days",
            "30",
            "--out",
            "c.csv",
        ],
    );
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());
}

#[test]
fn train_then_eval_agree() {
    let (_guard, root) = workspace();
    ok(
        &root,
        &[
            "train",
            "--variant",
            "pm4",
            "--config",
            "run.toml",
            "--data",
            "trips.csv",
            "--out-dir",
            "run",
        ],
    );
    let metrics = read_json(&root.join("run/metrics.json"));
    let reported = metrics["report"]["prediction_error_pct"].as_f64().unwrap();
    assert_eq!(metrics["run_config"]["model"]["variant"], "pm4");
    assert_eq!(metrics["run_config"]["seed"], 0);
    assert!(metrics["metadata"]["wall_clock_secs"].as_f64().is_some());

    let curve = std::fs::read_to_string(root.join("run/curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,train_error,test_error"));
    assert_eq!(curve.lines().count(), 3);

    let stdout = ok(
        &root,
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--data",
            "trips.csv",
            "--out-dir",
            "run",
        ],
    );
    let printed = value_after(&stdout, "prediction error:");
    assert!(
        (printed - reported).abs() < 1e-6,
        "eval {printed} vs metrics {reported}"
    );
    let eval = read_json(&root.join("run/eval.json"));
    assert_eq!(eval["report"]["prediction_error_pct"].as_f64().unwrap(), reported);
}

#[test]
fn training_artifacts_are_deterministic() {
    let (_guard, root) = workspace();
    for out in ["a", "b"] {
        ok(
            &root,
            &[
                "train",
                "--variant",
                "pm2",
                "--config",
                "run.toml",
                "--data",
                "trips.csv",
                "--out-dir",
                "x",
            ],
        );
        std::fs::rename(root.join("x"), root.join(out)).unwrap();
    }
    for file in ["checkpoint.json", "curve.csv"] {
        assert_eq!(
            std::fs::read(root.join("a").join(file)).unwrap(),
            std::fs::read(root.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("metadata");
        v
    };
    assert_eq!(
        strip(read_json(&root.join("a/metrics.json"))),
        strip(read_json(&root.join("b/metrics.json")))
    );
}

#[test]
fn cross_val_writes_artifacts() {
    let (_guard, root) = workspace();
    let stdout = ok(
        &root,
        &[
            "cross-val",
            "--variant",
            "pm1",
            "--config",
            "run.toml",
            "--data",
            "trips.csv",
            "--out-dir",
            "cv",
        ],
    );
    assert!(stdout.contains("test prediction error"));
    let metrics = read_json(&root.join("cv/metrics.json"));
    assert_eq!(metrics["regime"], "cross_val");
    let rounds: Vec<u64> = metrics["report"]["history"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["round"].as_u64().unwrap())
        .collect();
    assert_eq!(rounds.first(), Some(&1));
    assert_eq!(rounds.last(), Some(&2));
    assert!(root.join("cv/checkpoint.json").exists());
}

#[test]
fn explain_weights_satisfy_efficiency() {
    let (_guard, root) = workspace();
    ok(
        &root,
        &[
            "train",
            "--variant",
            "pm3",
            "--config",
            "run.toml",
            "--data",
            "trips.csv",
            "--out-dir",
            "run",
        ],
    );
    for level in ["event", "feature"] {
        ok(
            &root,
            &[
                "explain",
                "--checkpoint",
                "run/checkpoint.json",
                "--data",
                "trips.csv",
                "--level",
                level,
                "--output",
                "distance",
                "--trip-index",
                "49",
                "--out-dir",
                "run",
            ],
        );
        let json = read_json(&root.join(format!("run/attribution_{level}_distance.json")));
        let attr = &json["attribution"];
        let sum: f64 = attr["units"]
            .as_array()
            .unwrap()
            .iter()
            .map(|u| u["shap_value"].as_f64().unwrap())
            .sum();
        let base = attr["base_score"].as_f64().unwrap();
        let score = attr["model_score"].as_f64().unwrap();
        assert!((base + sum - score).abs() <= 1e-8, "{level}: {base} + {sum} vs {score}");
        let csv = std::fs::read_to_string(root.join(format!("run/attribution_{level}_distance.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("unit_index,shap_value"));
        assert_eq!(csv.lines().count(), attr["units"].as_array().unwrap().len() + 1);
    }
}

#[test]
fn predict_prints_denormalized_forecast() {
    let (_guard, root) = workspace();
    ok(
        &root,
        &[
            "train",
            "--variant",
            "pm1",
            "--config",
            "run.toml",
            "--data",
            "trips.csv",
            "--out-dir",
            "run",
        ],
    );
    let multi = tripcast(
        &root,
        &[
            "predict",
            "--checkpoint",
            "run/checkpoint.json",
            "--history",
            "trips.csv",
        ],
    );
    assert_eq!(multi.status.code(), Some(2));
    let stdout = ok(
        &root,
        &[
            "predict",
            "--checkpoint",
            "run/checkpoint.json",
            "--history",
            "trips.csv",
            "--vehicle",
            "veh-0000",
        ],
    );
    let value = |label: &str| value_after(&stdout, label);
    assert!(value("delta_t_secs").is_finite());
    assert!(value("distance_km").is_finite());
}

#[test]
fn checkpoint_version_mismatch_is_reported() {
    let (_guard, root) = workspace();
    ok(
        &root,
        &[
            "train",
            "--variant",
            "pm1",
            "--config",
            "run.toml",
            "--data",
            "trips.csv",
            "--out-dir",
            "run",
        ],
    );
    let path = root.join("run/checkpoint.json");
    let mut ckpt = read_json(&path);
    ckpt["format_version"] = serde_json::json!(99);
    std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
    let out = tripcast(
        &root,
        &["eval", "--checkpoint", "run/checkpoint.json", "--data", "trips.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version 99"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = tripcast(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tripcast(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        tripcast(dir.path(), &["train", "--data", "x.csv", "--variant", "pm9"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(tripcast(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tripcast(dir.path(), &["train", "--data", "missing.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.csv"), "vehicle_id,start_time\nv,1\n").unwrap();
    assert_eq!(
        tripcast(dir.path(), &["ingest", "--input", "bad.csv"]).status.code(),
        Some(2)
    );
    std::fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 1\n").unwrap();
    assert_eq!(
        tripcast(dir.path(), &["gen-data", "--config", "bad.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tripcast"))
        .current_dir(dir.path())
        .env("TRIPCAST_OUT_DIR", "from_env")
        .args(["gen-data", "--vehicles", "2", "--days", "20"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/trips.csv").exists());
}
