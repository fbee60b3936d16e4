use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qmon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmon"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn qmon")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("out/summary.json")).unwrap()).unwrap()
}

const SMALL_SCAN: &str = "protocol = \"both\"\nduration_s = 2.0\nrepeats = 2\nseed = 5\n\
    noise_strengths_uG_sqrtHz = [5.0, 50.0, 500.0]\n\
    probe_times_s = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2]\n";

#[test]
fn track_writes_csv_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "t.toml",
        "protocol = \"both\"\nduration_s = 3.0\ndata_probe_s = 1e-3\n",
    );
    let out = qmon(tmp.path(), &["track", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("out/track/run.csv")).unwrap();
    assert!(csv.starts_with(
        "i,t_start_s,t_end_s,b_applied_gauss,b_estimate_gauss,monitor_outcome,data_outcome,f_pred_corr,f_pred_uncorr\n"
    ));
    assert!(tmp.path().join("out/track/run_interleaved.csv").exists());
    let s = summary(tmp.path());
    assert_eq!(s["track"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn zero_noise_track_keeps_full_fidelity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qmon(
        tmp.path(),
        &[
            "track",
            "--set",
            "noise_asd_uG_sqrtHz=0",
            "--set",
            "spam_fidelity=1",
            "--set",
            "duration_s=5",
            "--set",
            "protocol=monitor",
        ],
    );
    assert!(out.status.success());
    let s = &summary(tmp.path())["track"]["runs"][0]["summary"];
    assert_eq!(s["mean_predicted_uncorrected"].as_f64().unwrap(), 1.0);
    // projection noise keeps the estimate dithering a few steps around zero
    assert!(s["mean_predicted_corrected"].as_f64().unwrap() > 0.95);
}

#[test]
fn invalid_key_is_named_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "alpah = 0.1\n");
    let out = qmon(tmp.path(), &["track", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));

    let out = qmon(tmp.path(), &["track", "--set", "spam_fidelity=1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("spam_fidelity"));
}

#[test]
fn psd_check_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qmon(tmp.path(), &["psd-check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert!(tmp.path().join("out/psd/psd.csv").exists());

    let out = qmon(tmp.path(), &["psd-check", "--set", "noise_asd_uG_sqrtHz=0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("zero noise"));

    let out = qmon(tmp.path(), &["psd-check", "--set", "cutoff_hz=600"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cutoff_hz"));
}

#[test]
fn scan_probe_then_scan_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scan.toml", SMALL_SCAN);
    let cfg = cfg.to_str().unwrap();
    let out = qmon(tmp.path(), &["scan-probe", "--config", cfg, "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for p in ["monitor", "interleaved"] {
        for asd in ["5", "50", "500"] {
            let dir = tmp.path().join("out/scan").join(p).join(asd);
            let points = fs::read_to_string(dir.join("points.csv")).unwrap();
            assert!(points.starts_with("probe_time_s,mean_fidelity,stderr\n"));
            assert_eq!(points.lines().count(), 8);
            let fit: Value = serde_json::from_slice(&fs::read(dir.join("fit.json")).unwrap()).unwrap();
            assert!(fit.get("tau_max").is_some());
        }
    }
    assert!(fs::read_to_string(tmp.path().join("out/scan/ratios.csv"))
        .unwrap()
        .starts_with("asd_uG_sqrtHz,ratio,ratio_err\n"));

    let out = qmon(tmp.path(), &["scan-noise", "--config", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("out/scan/tau_max.csv")).unwrap();
    assert!(table.starts_with("asd_uG_sqrtHz,protocol,tau_max_s,tau_max_err_s,ratio\n"));
    assert_eq!(table.lines().count(), 7);

    fs::remove_file(tmp.path().join("out/scan/interleaved/50/points.csv")).unwrap();
    let out = qmon(tmp.path(), &["scan-noise", "--config", cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn single_protocol_table_has_no_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scan.toml", &SMALL_SCAN.replace("\"both\"", "\"monitor\""));
    let cfg = cfg.to_str().unwrap();
    assert!(qmon(tmp.path(), &["scan-probe", "--config", cfg]).status.success());
    assert!(!tmp.path().join("out/scan/ratios.csv").exists());
    assert!(qmon(tmp.path(), &["scan-noise", "--config", cfg]).status.success());
    let table = fs::read_to_string(tmp.path().join("out/scan/tau_max.csv")).unwrap();
    assert!(table.starts_with("asd_uG_sqrtHz,protocol,tau_max_s,tau_max_err_s\n"));
}

#[test]
fn unreachable_threshold_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    // fidelity stays near 0.99 across these probe times
    let text = "protocol = \"both\"\nduration_s = 2.0\nrepeats = 2\n\
        noise_strengths_uG_sqrtHz = [0.5]\nprobe_times_s = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3]\n";
    let cfg = write(tmp.path(), "scan.toml", text);
    assert!(qmon(tmp.path(), &["scan-probe", "--config", cfg.to_str().unwrap()])
        .status
        .success());
    let fit: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/scan/monitor/0.5/fit.json")).unwrap()).unwrap();
    assert_eq!(fit["tau_max"]["extrapolated"], Value::Bool(true));
    let ratios = fs::read_to_string(tmp.path().join("out/scan/ratios.csv")).unwrap();
    assert_eq!(ratios.lines().nth(1).unwrap(), "0.5,,");
}

#[test]
fn scan_requires_config() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!qmon(tmp.path(), &["scan-probe"]).status.success());
}
