//! End-to-end runs of the command-line tool on a tiny synthetic config.

use std::path::Path;
use std::process::Command;

use gfscil::harness::validate_report;

const CONFIG: &str = r#"
seed = 2
base_classes = 3
n_way = 2
k_shot = 2
sessions = 3

[data]
kind = "sbm"
classes = 7
nodes_per_class = 14
p_in = 0.3
p_out = 0.02
feature_dim = 8
feature_noise = 0.4
seed = 1

[encoder]
heads = 2
hidden_dim = 4

[base]
base_epochs = 5
tva_way = 2
"#;

fn gfscil(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_gfscil"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "gfscil {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn check_report(path: &Path, method: &str) {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    validate_report(&v).unwrap();
    assert_eq!(v["method"], method);
    assert_eq!(v["sessions"].as_array().unwrap().len(), 3);
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), CONFIG).unwrap();
    let cfg = ["--config", "c.toml", "--splits", "splits.json"];

    gfscil(d, &["prepare-splits", "--config", "c.toml", "--out", "splits.json"]);
    assert!(d.join("splits.json").exists());

    gfscil(d, &[&["train-base"][..], &cfg, &["--out-dir", "ckpt"]].concat());
    gfscil(d, &[&["run-incremental"][..], &cfg, &["--checkpoint-dir", "ckpt", "--out", "a.json"]].concat());
    gfscil(d, &[&["run-incremental"][..], &cfg, &["--out", "b.json"]].concat());
    check_report(&d.join("a.json"), "tap");
    // Loading the checkpoint reproduces in-process base training exactly.
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );

    gfscil(d, &[&["run-incremental"][..], &cfg, &["--no-ema", "--no-pso", "--out", "c.json"]].concat());
    check_report(&d.join("c.json"), "tap-no-pso-no-ema");

    for kind in ["finetune", "frozen", "frozen_projection"] {
        let out = format!("{kind}.json");
        gfscil(d, &[&["baseline", "--kind", kind][..], &cfg, &["--out", &out]].concat());
        check_report(&d.join(&out), kind);
    }

    let table = gfscil(d, &["report", "a.json", "finetune.json", "frozen.json", "--csv", "plot.csv"]);
    assert!(table.contains("frozen"));
    let csv = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
}

#[test]
fn rejects_unknown_baseline_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), CONFIG.replace("sessions = 3", "sessions = 9")).unwrap();
    let status = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_gfscil"))
            .current_dir(d)
            .args(args)
            .output()
            .unwrap()
    };
    let out = status(&["baseline", "--kind", "oracle", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let out = status(&["prepare-splits", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}
