use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mocd_core::data::SyntheticSpec;
use mocd_core::experiment::{Metrics, FPR_LEVELS};
use serde_json::{json, Value};

fn mocd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocd"))
        .args(args)
        .env("MOCD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn small_config(out: &Path, seed: u64) -> Value {
    json!({
        "dataset": {"synthetic": {
            "known_classes": 4, "unknown_classes": 2, "samples_per_class": 40,
            "views": 3, "view_dims": [5, 5, 4], "latent_dim": 4, "noise_std": 1.0,
            "bias_view_index": 2, "bias_strength": 20.0
        }},
        "train": {"epochs": 6, "batch_size": 16, "hidden": [16], "apn_hidden": [8], "patience": null},
        "split": {"train": 0.3, "val": 0.2, "known_classes": [0, 1, 2, 3]},
        "output_dir": out,
        "seed": seed
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_schema_valid_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    // Default synthetic spec, shortened training.
    let cfg = json!({
        "dataset": {"synthetic": serde_json::to_value(SyntheticSpec::default()).unwrap()},
        "train": {"epochs": 3},
        "output_dir": out,
        "seed": 4
    });
    let path = write_config(tmp.path(), "cfg.json", &cfg);
    ok(&mocd(&["run", "--config", path.to_str().unwrap()]));

    for f in [
        "metrics.json",
        "oscr_curve.csv",
        "history.csv",
        "model.ckpt",
        "split.json",
        "predictions.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let raw: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let keys: Vec<&str> = raw["ccr_at_fpr"]
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys, FPR_LEVELS.iter().map(|(k, _)| *k).collect::<Vec<_>>());
    let m = Metrics::load(out.join("metrics.json")).unwrap();
    assert_eq!(m.seed, 4);
    assert_eq!((m.known_classes, m.unknown_classes), (6, 2));
    assert!((m.openness - mocd_core::eval::openness(6, 2).unwrap()).abs() < 1e-15);
    assert!((m.ccr_at("1.00") - m.closed_set_accuracy).abs() < 1e-12);
    assert_eq!(m.epochs_run, 3);

    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let curve = fs::read_to_string(out.join("oscr_curve.csv")).unwrap();
    assert!(curve.lines().count() > 2);
    let split: Value = serde_json::from_str(&fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    for key in [
        "train",
        "val",
        "test_known",
        "test_unknown",
        "known_class_ids",
        "openness",
    ] {
        assert!(split.get(key).is_some(), "split.json lacks {key}");
    }
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        // Same output path both times so the config echo matches.
        let out = tmp.path().join("same");
        let path = write_config(tmp.path(), "cfg.json", &small_config(&out, 3));
        ok(&mocd(&["run", "--config", path.to_str().unwrap()]));
        bytes.push(fs::read(out.join("metrics.json")).unwrap());
        fs::rename(&out, tmp.path().join(name)).unwrap();
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn config_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&tmp.path().join("x"), 0);
    cfg["train"]["learning_rat"] = json!(0.1);
    let path = write_config(tmp.path(), "typo.json", &cfg);
    let out = mocd(&["run", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let missing = mocd(&["run", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn divergence_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = small_config(&out, 0);
    cfg["train"]["learning_rate"] = json!(1e300);
    let path = write_config(tmp.path(), "cfg.json", &cfg);
    let res = mocd(&["run", "--config", path.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("epoch"));
    assert!(out.join("split.json").is_file());
    assert!(out.join("history.csv").is_file());
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn ablation_table_has_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let path = write_config(tmp.path(), "cfg.json", &small_config(&out, 0));
    ok(&mocd(&[
        "ablate",
        "--config",
        path.to_str().unwrap(),
        "--grid",
        "table3",
        "--seeds",
        "1,2",
    ]));
    let mut reader = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert!(header.iter().any(|h| h == "ccr_fpr10_mean"), "{header:?}");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert!(out.join("h").join("seed2").join("metrics.json").is_file());
}

#[test]
fn openness_sweep_trades_known_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let mut cfg = small_config(&out, 0);
    cfg["dataset"]["synthetic"]["known_classes"] = json!(8);
    cfg["dataset"]["synthetic"]["unknown_classes"] = json!(4);
    cfg["dataset"]["synthetic"]["view_dims"] = json!([5, 5, 8]);
    cfg["split"] = json!({"train": 0.3, "val": 0.2});
    cfg["train"]["epochs"] = json!(2);
    let path = write_config(tmp.path(), "cfg.json", &cfg);
    ok(&mocd(&[
        "sweep-openness",
        "--config",
        path.to_str().unwrap(),
        "--values",
        "0.05,0.1,0.15,0.2",
    ]));

    let metrics: Vec<Metrics> = ["0.05", "0.1", "0.15", "0.2"]
        .iter()
        .map(|v| Metrics::load(out.join(format!("openness_{v}")).join("metrics.json")).unwrap())
        .collect();
    assert!(metrics.windows(2).all(|w| w[1].openness >= w[0].openness));
    assert!(metrics.windows(2).all(|w| w[1].known_classes <= w[0].known_classes));
    assert!(metrics.first().unwrap().known_classes > metrics.last().unwrap().known_classes);
}

#[test]
fn report_groups_by_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for seed in [1, 2, 3] {
        let out = tmp.path().join(format!("a{seed}"));
        let path = write_config(tmp.path(), "cfg.json", &small_config(&out, seed));
        ok(&mocd(&["run", "--config", path.to_str().unwrap()]));
        dirs.push(out);
    }
    let other = tmp.path().join("b");
    let mut cfg = small_config(&other, 1);
    cfg["train"]["epochs"] = json!(3);
    let path = write_config(tmp.path(), "cfg.json", &cfg);
    ok(&mocd(&["run", "--config", path.to_str().unwrap()]));
    let junk = tmp.path().join("junk");
    fs::create_dir(&junk).unwrap();
    fs::write(junk.join("metrics.json"), "{\"not\": \"metrics\"}").unwrap();

    let table = tmp.path().join("report.csv");
    let out = mocd(&["report", tmp.path().to_str().unwrap(), "--out", table.to_str().unwrap()]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk"));
    let mut reader = csv::Reader::from_path(&table).unwrap();
    let mut runs: Vec<String> = reader.records().map(|r| r.unwrap()[1].to_string()).collect();
    runs.sort();
    assert_eq!(runs, vec!["1", "3"]);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(!mocd(&["report", empty.to_str().unwrap()]).status.success());
}

#[test]
fn generate_writes_a_loadable_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"known_classes": 2, "unknown_classes": 1, "samples_per_class": 5, "views": 2, "view_dims": [3, 2], "latent_dim": 2, "noise_std": 0.5, "bias_view_index": null}"#).unwrap();
    let out = tmp.path().join("data");
    ok(&mocd(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]));
    let d = mocd_core::data::load_dataset(&out).unwrap();
    assert_eq!((d.len(), d.view_dims()), (15, vec![3, 2]));
}
