use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn xbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xbar"))
        .args(args)
        .env_remove("XBAR_MNIST_DIR")
        .output()
        .expect("failed to launch xbar")
}

fn ok(args: &[&str]) -> Output {
    let out = xbar(args);
    assert!(
        out.status.success(),
        "xbar {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two 28×28 images in IDX format, used as both train and test split.
fn write_fixture(dir: &Path) {
    let mut pixels = vec![0u8; 2 * 784];
    for k in 0..100 {
        pixels[k * 3] = 255;
        pixels[784 + 400 + k] = 128;
    }
    let labels = [3u8, 8];
    let (img, lab) = xbar::dataset::encode_idx(&pixels, &labels, 28, 28);
    for split in ["train", "t10k"] {
        fs::write(dir.join(format!("{split}-images-idx3-ubyte")), &img).unwrap();
        fs::write(dir.join(format!("{split}-labels-idx1-ubyte")), &lab).unwrap();
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_trace_then_fit_recovers_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    ok(&[
        "gen-trace", "--dw0-plus", "0.012", "--dw0-minus", "0.008", "--wmax", "1.2", "--wmin", "-0.9",
        "--w0", "-0.1", "--out", gen.to_str().unwrap(),
    ]);
    assert_eq!(manifest(&gen)["subcommand"], "gen-trace");
    let fit_dir = tmp.path().join("fit");
    let out = ok(&["fit", "--trace", gen.join("trace.csv").to_str().unwrap(), "--out", fit_dir.to_str().unwrap()]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = &v["params"];
    for (key, want) in [("dw0_plus", 0.012), ("dw0_minus", 0.008), ("w_max", 1.2), ("w_min", -0.9)] {
        let got = p[key].as_f64().unwrap();
        assert!(((got - want) / want).abs() < 1e-3, "{key}: {got} vs {want}");
    }
    assert!(fit_dir.join("fit.json").exists());
    assert!(fit_dir.join("manifest.json").exists());
}

#[test]
fn train_smoke_on_fixture_and_rerun_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_fixture(&data);
    let run1 = tmp.path().join("run1");
    ok(&[
        "train", "--device", "float", "--epochs", "1", "--seed", "3", "--data", data.to_str().unwrap(),
        "--out", run1.to_str().unwrap(),
    ]);
    let epochs = fs::read_to_string(run1.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 2);
    assert!(epochs.starts_with("epoch,test_error_pct,train_loss"));
    assert!(run1.join("weights_hist.csv").exists());
    let m = manifest(&run1);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["epochs"], 1);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);

    let run2 = tmp.path().join("run2");
    ok(&[
        "train", "--config", run1.join("manifest.json").to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", run2.to_str().unwrap(),
    ]);
    assert_eq!(epochs, fs::read_to_string(run2.join("epochs.csv")).unwrap());
}

#[test]
fn analog_train_flags_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_fixture(&data);
    let out = tmp.path().join("run");
    ok(&[
        "train", "--device", "softbound", "--epochs", "1", "--dw0", "0.02", "--wmax", "1.5", "--wsym", "-0.3",
        "--zero-shift", "on", "--activation", "tanh", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    let c = &manifest(&out)["config"];
    assert_eq!(c["activation"], "tanh");
    assert_eq!(c["device"]["type"], "analog");
    assert_eq!(c["device"]["dw0"], 0.02);
    assert_eq!(c["device"]["w_max"], 1.5);
    assert_eq!(c["device"]["w_sym"], -0.3);
    assert_eq!(c["device"]["zero_shift"], true);
}

#[test]
fn calibrate_demo_writes_one_row_per_device() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cal");
    ok(&["calibrate", "--pairs", "200", "--trace-device", "5", "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "device_index,analytic_wsym,final_weight,residual");
    assert_eq!(lines.len(), 17);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 401);
}

#[test]
fn sweep_on_fixture_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_fixture(&data);
    let spec = serde_json::json!({
        "dw0": [0.01, 0.05],
        "w_max": [1.0],
        "w_sym": [0.0, 0.5],
        "zero_shift": [false, true],
        "base": { "epochs": 1, "device": { "type": "analog", "calibration_pairs": 20 } }
    });
    let spec_path = tmp.path().join("spec.json");
    fs::write(&spec_path, spec.to_string()).unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--spec", spec_path.to_str().unwrap(), "--mode", "wsym", "--data", data.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
    for f in ["contour.gp", "wsym.gp", "states.gp", "spec.json", "manifest.json", "cells/cell0000/epochs.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn bad_invocations_fail_with_diagnostics() {
    let out = xbar(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    let out = xbar(&["train", "--out", "/nonexistent/x", "--data", "/nonexistent/data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = xbar(&["fit", "--trace", "/nonexistent/trace.csv"]);
    assert!(!out.status.success());
    let out = xbar(&["train", "--device", "float", "--dw0", "0.1", "--out", "x"]);
    assert!(!out.status.success());
}

#[test]
fn help_documents_module_flags() {
    let help = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    for flag in [
        "--config", "--seed", "--epochs", "--activation", "--device", "--dw0", "--wmax", "--wsym", "--zero-shift", "--out",
    ] {
        assert!(help.contains(flag), "train --help lacks {flag}");
    }
    let help = String::from_utf8(ok(&["sweep", "--help"]).stdout).unwrap();
    assert!(help.contains("--full") && help.contains("--spec"));
    let help = String::from_utf8(ok(&["calibrate", "--help"]).stdout).unwrap();
    assert!(help.contains("--trace-device") && help.contains("--pairs"));
}
