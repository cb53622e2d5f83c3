use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmlab")).args(args).env_remove("GMLAB_SEED").output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path
}

const TINY: &str = r#"{"schema": 1, "seed": 3, "arch": {"depth": 1, "width": 8},
 "mixture": {"size_dist": {"kind": "fixed", "n": 12}},
 "train": {"m": 80}, "compare": {"m": 60, "seeds": 2, "alphas": [0.0, 0.2], "depths": [1, 2]},
 "converge": {"n_list": [20, 40], "trials": 4, "resolution": 64}}"#;

#[test]
fn bounds_prints_report_json() {
    let cfg = configs().join("paper_t1.json");
    let out = gmlab(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["zeta", "C", "T_1", "S_6", "Omega_12", "N0", "convergence_bound", "generalization_bound"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["generalization_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn converge_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let c = cfg.to_str().unwrap();
    let one = gmlab(&["converge", "--config", c, "--jobs", "1"]);
    let three = gmlab(&["converge", "--config", c, "--jobs", "3"]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, three.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.starts_with("alpha,N,trial,dist_output,dist_sq,bound\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
}

#[test]
fn shipped_sweep_config_is_deterministic_across_jobs() {
    let cfg = configs().join("sweep.json");
    let c = cfg.to_str().unwrap();
    let a = gmlab(&["converge", "--config", c, "--jobs", "1"]);
    let b = gmlab(&["converge", "--config", c, "--jobs", "4"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_json_is_a_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"schema\": 1,\n  \"seed\": ,\n}");
    let out = gmlab(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3") && err.contains("column"), "{err}");
}

#[test]
fn schema_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [r#"{"schema": 9}"#, r#"{"schema": 1, "converge": {"trials": 0}}"#, r#"{"schema": 1, "unknown": 1}"#] {
        let cfg = write_config(dir.path(), text);
        assert_eq!(gmlab(&["bounds", "--config", cfg.to_str().unwrap()]).status.code(), Some(2), "{text}");
    }
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = gmlab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn version_reports_build_metadata() {
    let out = gmlab(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")) && text.contains("build profile"), "{text}");
}

#[test]
fn dataset_forward_train_and_bounds_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let c = cfg.to_str().unwrap();
    let ds = dir.path().join("ds.bin");
    let d = ds.to_str().unwrap();
    assert_eq!(gmlab(&["gen-dataset", "--config", c, "--out", d]).status.code(), Some(0));
    assert!(dir.path().join("ds.bin.json").exists());

    let w = dir.path().join("w.json");
    let out = gmlab(&["train", "--config", c, "--out", w.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(report["pac_bayes"].as_f64().unwrap() > 0.0);

    let out = gmlab(&["forward", "--config", c, "--dataset", d, "--weights", w.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("index,label,logit_1,logit_2,prediction\n"));
    assert_eq!(text.lines().count(), 81);

    let out = gmlab(&["bounds", "--config", c, "--dataset", d]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["rademacher"].as_f64().unwrap() > 0.0);
    assert!(v["empirical"]["gap"].as_f64().is_some());
}

#[test]
fn seed_changes_samples_and_repeats_exactly() {
    let a = gmlab(&["sample", "--seed", "1", "--count", "2", "--n", "6"]);
    let b = gmlab(&["sample", "--seed", "1", "--count", "2", "--n", "6"]);
    let c = gmlab(&["sample", "--seed", "2", "--count", "2", "--n", "6"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["nodes"], 6);
}

#[test]
fn env_seed_is_the_default() {
    let run = |env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gmlab"));
        cmd.args(["sample", "--count", "1", "--n", "6"]).env_remove("GMLAB_SEED");
        if let Some(s) = env {
            cmd.env("GMLAB_SEED", s);
        }
        cmd.output().unwrap()
    };
    let explicit = gmlab(&["sample", "--seed", "9", "--count", "1", "--n", "6"]);
    assert_eq!(run(Some("9")).stdout, explicit.stdout);
    assert_ne!(run(None).stdout, explicit.stdout);
    assert_eq!(run(Some("x")).status.code(), Some(2));
}

#[test]
fn compare_writes_one_table_per_alpha_and_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let outdir = dir.path().join("cmp");
    let out = gmlab(&["compare", "--config", cfg.to_str().unwrap(), "--out", outdir.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["mean_00.csv", "mean_01.csv", "sum_00.csv", "sum_01.csv", "runs.csv"] {
        assert!(outdir.join(name).exists(), "{name}");
    }
    let table = std::fs::read_to_string(outdir.join("mean_00.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("Layers,ours,ours_std,pac_bayes,pac_bayes_std,rademacher,rademacher_std"));
    let labels: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["T=1 WD", "T=1 w/o WD", "T=2 WD", "T=2 w/o WD"]);
}
