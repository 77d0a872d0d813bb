use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn anikern(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anikern")).args(args).output().expect("spawn anikern")
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let p = dir.join("experiment.json");
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn laplace_1d() -> Value {
    json!({ "m": [1], "terms": [{ "beta": [2], "re": 1.0 }] })
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn report(dir: &Path, check: &str) -> Value {
    serde_json::from_slice(&fs::read(dir.join(format!("{check}.json"))).unwrap()).unwrap()
}

#[test]
fn scaling_identity_on_gaussian_writes_one_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "symbol": laplace_1d(),
            "grid": { "radii": [20.0], "counts": [200] },
            "times": [0.5, 1.0, 2.0],
            "checks": ["scaling_identity"],
        }),
    );
    let out = tmp.path().join("out");
    let o = anikern(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs: Vec<_> = files(&out).into_keys().filter(|k| k.ends_with(".csv")).collect();
    assert_eq!(csvs, vec!["scaling_identity.csv".to_string()]);
    assert_eq!(report(&out, "scaling_identity")["status"], "pass");
}

#[test]
fn missing_coefficient_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "symbol": laplace_1d(),
            "coefficients_file": "nowhere.json",
            "grid": { "radii": [4.0], "counts": [32] },
            "checks": ["hypothesis1"],
        }),
    );
    let out = tmp.path().join("out");
    let o = anikern(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_blob_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "symbol": laplace_1d(),
            "coefficients": {
                "m": [1],
                "reference": [{ "alpha": [1], "beta": [1], "re": 1.0 }],
                "pairs": [{ "alpha": [1], "beta": [1], "values": { "blob": { "path": "a11.bin" } } }],
            },
            "grid": { "radii": [4.0], "counts": [32] },
            "checks": ["hypothesis1"],
        }),
    );
    let out = tmp.path().join("out");
    let o = anikern(&["hyp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a11.bin"));
    assert!(!out.exists());
}

#[test]
fn validate_reports_derived_quantities_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "symbol": { "m": [1, 2], "terms": [{ "beta": [2, 0], "re": 1.0 }, { "beta": [0, 4], "re": 1.0 }] },
            "grid": { "radii": [8.0, 8.0], "counts": [32, 32] },
            "times": [1.0],
            "output_dir": "results",
            "checks": ["mass"],
        }),
    );
    let before = files(tmp.path());
    let o = anikern(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let diag: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(diag["mu"], "3/4");
    assert_eq!(diag["kappa"], 1);
    assert_eq!(files(tmp.path()), before);
}

#[test]
fn odd_counts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({ "symbol": laplace_1d(), "grid": { "radii": [4.0], "counts": [33] }, "checks": ["positive_definite"] }),
    );
    let o = anikern(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("counts must be even"));
}

#[test]
fn same_seed_reproduces_artifacts_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "symbol": { "m": [1, 2], "terms": [{ "beta": [2, 0], "re": 1.0 }, { "beta": [1, 2], "re": 0.5 }, { "beta": [0, 4], "re": 1.0 }] },
            "grid": { "radii": [6.0, 6.0], "counts": [32, 32] },
            "freq_counts": [128, 64],
            "times": [0.5, 1.0],
            "seed": 11,
            "checks": ["homogeneity", "lf_oracle", "kernel", "bound_fit"],
        }),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = cfg.to_str().unwrap();
    anikern(&["run", "--config", c, "--out", a.to_str().unwrap(), "--jobs", "1"]);
    anikern(&["run", "--config", c, "--out", b.to_str().unwrap(), "--jobs", "3"]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.contains_key("kernel_1.bin") && fa.contains_key("lf.csv"));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }

    let d = tmp.path().join("d");
    anikern(&["run", "--config", c, "--out", d.to_str().unwrap(), "--seed", "12"]);
    assert_eq!(report(&d, "homogeneity")["seed"], 12);
}

#[test]
fn quartic_pipeline_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quartic_pipeline.json");
    let o = anikern(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    for check in ["lf_oracle", "scaling_identity", "mass", "norm_slopes", "bound_fit"] {
        assert_eq!(report(tmp.path(), check)["status"], "pass", "{check}");
    }
    let summary: Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn hyp_runs_the_chain_on_a_checkerboard() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/checkerboard_1d.json");
    let o = anikern(&["hyp", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let h1 = report(tmp.path(), "hypothesis1");
    assert!(h1["values"]["constants"]["c_low"].as_f64().unwrap() >= 0.5);
    let h2 = report(tmp.path(), "hypothesis2");
    let m = h2["values"]["constants"]["M"].as_f64().unwrap();
    assert_eq!(report(tmp.path(), "twisted_sg_norm")["values"]["M"].as_f64(), Some(m));
    assert_eq!(report(tmp.path(), "hypothesis3")["status"], "pass");
}

#[test]
fn vc_run_exports_operator() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/checkerboard_1d.json");
    let o = anikern(&["vc-run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = fs::read_to_string(tmp.path().join("operator.mtx")).unwrap();
    assert!(text.starts_with("%%MatrixMarket matrix coordinate complex general"));
    assert!(tmp.path().join("kernel_column_fit_margins.csv").is_file());
}
