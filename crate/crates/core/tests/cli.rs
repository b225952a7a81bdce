mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bidomain(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bidomain"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("BIDOMAIN_THREADS", "1")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
[geometry]
kind = "inclusion"
half_widths = [0.25]
resolution = 4
dimension = 2

[membrane]
preset = "fhn"
v0 = { type = "cosine-product", mean = 0.4, amplitude = 0.2 }

[time]
dt = 0.1
final_time = 1.0

[study]
eps = [0.5, 0.25]
"#;

#[test]
fn unfold_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = bidomain(&["unfold-check"], &cfg, dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        read_json(&dir.path().join("unfold_check.json"))["identities_passed"],
        true
    );
}

#[test]
fn cell_tensor_of_shipped_laminate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bidomain(
        &["cell-tensor"],
        &common::config_path("laminate_2d.toml"),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir.path().join("cell_tensor.json"));
    assert_eq!(v["membrane_area"], 2.0);
}

#[test]
fn converge_then_micro_and_macro() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    for cmd in ["converge", "micro", "macro"] {
        let out = bidomain(&[cmd, "--serial"], &cfg, dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps,e_eps,unfolded_L2,avg_err_ui,avg_err_ue,energy_micro_i,energy_micro_e,energy_macro_i,energy_macro_e,order_e"
    );
    assert_eq!(lines.count(), 2);
    assert!(dir.path().join("micro_monitors.csv").exists());
    let summary = read_json(&dir.path().join("macro_summary.json"));
    assert!(summary["residuals"]["max_relative"].as_f64().unwrap() < 1e-8);
}

#[test]
fn converge_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = bidomain(&["converge", "--serial"], &cfg, &out_dir);
        assert_eq!(out.status.code(), Some(0));
        csvs.push(std::fs::read(out_dir.join("convergence.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        SMALL.replace("eps = [0.5, 0.25]", "eps = []"),
        SMALL.replace("half_widths = [0.25]", "half_widths = [0.3]"),
        SMALL.replace("dt = 0.1", "dt = -1.0"),
        "not toml [".to_string(),
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{k}.toml"), text);
        let out = bidomain(&["converge"], &cfg, dir.path());
        assert_eq!(out.status.code(), Some(2), "case {k}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["exit_code"], 2);
    }
    let out = bidomain(&["micro"], &dir.path().join("missing.toml"), dir.path());
    assert_eq!(out.status.code(), Some(2));
}
