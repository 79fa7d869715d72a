//! Binary-level tests: stage ordering, exit codes, artifacts, and the
//! exposure scoring path.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_proxclass")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_plan(dir: &Path) -> PathBuf {
    let path = dir.join("plan.csv");
    let mut text = String::from(
        "run_id,environment,setup,device,distance_cm,x_m,y_m,tx_power_dbm,roll_period_s\n",
    );
    for (i, d) in [50, 100, 200, 300, 400, 500].iter().enumerate() {
        text.push_str(&format!("gt{i},office,ground_truth,DevA,{d},,,0,120\n"));
    }
    // A near scenario run long enough to trip the exposure warning.
    text.push_str("warn,office,scenario,DevA,30,,,0,\n");
    fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.cfg");
    let out = dir.join("out");
    fs::write(
        &path,
        format!(
            "out_dir = {out}\n\
             seed = 11\n\
             synth_plan = {plan}\n\
             synth.duration_s = 900\n\
             synth.ble_interval_s = 0.5\n\
             ble_log = {out}/synth/ble.csv\n\
             wifi_log = {out}/synth/wifi.csv\n\
             run_metadata = {out}/synth/runs.csv\n\
             fingerprint_table = {out}/synth/fingerprints.csv\n\
             ble_seed_table = {out}/synth/ble_seeds.csv\n\
             prep.n_per_class = 400\n\
             synth.ble.sigma_db = 1.5\n\
             synth.ble.noise_db = 0.5\n\
             tx_power.DevA = 0\n\
             grid.max_depth = 6\n\
             grid.min_samples_leaf = 1\n\
             grid.n_trees = 10\n\
             grid.features_per_split = sqrt\n",
            out = out.display(),
            plan = dir.join("plan.csv").display(),
        ),
    )
    .unwrap();
    path
}

#[test]
fn stage_order_is_enforced_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_plan(dir.path());
    write_config(dir.path());

    // Usage error: stage input not configured.
    let out = run_in(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ble_log"));

    // Data error: upstream artifact missing, names the prior stage.
    let out = run_in(dir.path(), &["--config", "pipeline.cfg", "match"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("proxclass ingest"), "{stderr}");

    let out = run_in(dir.path(), &["--config", "pipeline.cfg", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("proxclass prep"), "{stderr}");

    // Unknown config key is a usage error.
    let out = run_in(
        dir.path(),
        &["--config", "pipeline.cfg", "--set", "bogus=1", "ingest"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_produces_artifacts_and_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_plan(dir.path());
    write_config(dir.path());
    let cfg = ["--config", "pipeline.cfg"];

    for stage in ["synth", "ingest", "match", "calibrate", "prep", "train", "eval"] {
        let out = run_in(dir.path(), &[&cfg[..], &[stage]].concat());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{stage} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    let out_dir = dir.path().join("out");
    for artifact in [
        "synth/ble.csv",
        "synth/truth_traces.csv",
        "normalized/ble.csv",
        "matched.csv",
        "corrections.csv",
        "prep/train.csv",
        "prep/eval.csv",
        "models/DevA/model_01.txt",
        "models/DevA/model_13.txt",
        "reports/report.csv",
        "reports/report.txt",
        "ingest.manifest",
        "eval.manifest",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }

    // The report is machine-readable and covers all 13 models.
    let report = fs::read_to_string(out_dir.join("reports/report.csv")).unwrap();
    let rows = proxclass_core::metrics::read_report_csv(report.as_bytes()).unwrap();
    let models: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(models.len(), 13);
    assert!(rows.iter().any(|r| r.dataset == "gt_eval"));
    assert!(rows.iter().any(|r| r.dataset == "scenario:office"));

    // Exposure scoring: 15 minutes at 30 cm must warn.
    let out = run_in(
        dir.path(),
        &[&cfg[..], &["gaen", "--run", "warn", "--device", "DevA"]].concat(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "gaen failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warn = true"), "{stdout}");
    assert!(out_dir.join("gaen/warn_DevA.csv").exists());

    // A far run of the same length must not warn.
    let out = run_in(
        dir.path(),
        &[&cfg[..], &["gaen", "--run", "gt5"]].concat(),
    );
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warn = false"), "{stdout}");

    // Config digest is stamped into artifacts.
    let matched = fs::read_to_string(out_dir.join("matched.csv")).unwrap();
    assert!(matched.starts_with("# config_digest="));
}
