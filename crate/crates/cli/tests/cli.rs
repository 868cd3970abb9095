use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pqos(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pqos"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .env_remove("PQOS_SEED")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = write(d, "bad.json", "{ not json");
    let unknown = write(d, "unknown.json", r#"{"packets": 10, "colour": "red"}"#);
    for args in [
        vec!["simulate", "--config", &bad],
        vec!["simulate", "--config", &unknown],
        vec!["simulate", "--config", "missing.json"],
        vec!["correlate"],
        vec!["correlate", "--data", "nowhere.csv"],
        vec!["train", "nonsense"],
    ] {
        let out = pqos(&args, d);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn invalid_seed_variable_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pqos"))
        .args(["dists", "--out", "d"])
        .current_dir(tmp.path())
        .env("PQOS_SEED", "-3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_pqos"))
        .args(["simulate", "--out", "s"])
        .current_dir(tmp.path())
        .env("PQOS_SEED", "-3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missed_bound_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "v.json", r#"{"packets": 5000, "ks_bound": 0.0}"#);
    let out = pqos(&["validate-model", "--config", &cfg, "--out", "v"], d);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("v/validate.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert!(d.join("v/fig3.csv").exists());
}

#[test]
fn diverging_training_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(
        d,
        "r.json",
        r#"{"data": {"generate": {"days": 2, "grid_cols": 2, "grid_rows": 1}},
            "model": {"hidden": [4], "train": {"epochs": 3, "batch_size": 32, "lr": 1e12}}}"#,
    );
    let out = pqos(&["train", "regression", "--config", &cfg, "--out", "r"], d);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_writes_traces_windows_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(
        d,
        "s.json",
        r#"{"packets": 3000, "sweep": {"arrival_rates": [0.2, 0.5], "blers": [0.0, 0.2]}}"#,
    );
    let out = pqos(&["simulate", "--config", &cfg, "--out", "s"], d);
    assert_eq!(out.status.code(), Some(0));
    let traces = fs::read_to_string(d.join("s/traces.csv")).unwrap();
    assert!(traces.starts_with("packet_id,t_arriv_ms,t_ack_ms,retx_count"));
    let sweep = fs::read_to_string(d.join("s/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert!(d.join("s/pdelay.csv").exists() && d.join("s/simulate.json").exists());
}

#[test]
fn seed_flag_and_variable_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "s.json", r#"{"packets": 2000}"#);
    pqos(
        &["simulate", "--config", &cfg, "--out", "a", "--seed", "5"],
        d,
    );
    let out = Command::new(env!("CARGO_BIN_EXE_pqos"))
        .args(["simulate", "--config", &cfg, "--out", "b"])
        .current_dir(d)
        .env("RUST_LOG", "off")
        .env("PQOS_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    pqos(
        &["simulate", "--config", &cfg, "--out", "c", "--seed", "6"],
        d,
    );
    let read = |dir: &str| fs::read(d.join(dir).join("traces.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn generated_files_feed_correlate_and_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gen = write(
        d,
        "g.json",
        r#"{"dataset": {"scenario": "event", "days": 16, "grid_cols": 2, "grid_rows": 2}}"#,
    );
    let out = pqos(&["gen-kpi", "--config", &gen, "--out", "g"], d);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("6144 records"));
    for f in [
        "kpi.csv",
        "labels.csv",
        "nodes.csv",
        "edges.csv",
        "gen_kpi.json",
    ] {
        assert!(d.join("g").join(f).exists(), "{f}");
    }

    let out = pqos(&["correlate", "--data", "g/kpi.csv", "--out", "c"], d);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    assert!(String::from_utf8_lossy(&out.stdout).contains("DL resource utilization"));
    assert!(d.join("c/correlation.csv").exists());

    let an = write(
        d,
        "a.json",
        r#"{"data": {"csv": "g/kpi.csv", "labels": "g/labels.csv"},
            "model": {"train": {"epochs": 2, "batch_size": 64, "lr": 0.003}}}"#,
    );
    let out = pqos(&["train", "anomaly", "--config", &an, "--out", "a"], d);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let timeline = fs::read_to_string(d.join("a/timeline.csv")).unwrap();
    assert!(timeline.starts_with("timestamp,cell_id,score,flag,label"));

    let no_labels = write(d, "n.json", r#"{"data": {"csv": "g/kpi.csv"}}"#);
    let out = pqos(
        &["train", "anomaly", "--config", &no_labels, "--out", "n"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));

    let sp = write(
        d,
        "sp.json",
        r#"{"data": {"csv": "g/kpi.csv", "nodes": "g/nodes.csv", "edges": "g/edges.csv"},
            "model": {"hidden": 4, "train_days": 12, "test_days": 4,
                      "train": {"epochs": 1, "batch_size": 16, "lr": 0.003}}}"#,
    );
    let out = pqos(&["train", "spatial", "--config", &sp, "--out", "sp"], d);
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["report.json", "sage.json", "dnn.json", "spatial.csv"] {
        assert!(d.join("sp").join(f).exists(), "{f}");
    }
}

#[test]
fn dists_tabulates_a_normalized_density() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = pqos(&["dists", "--out", "d"], d);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("d/dists.json")).unwrap()).unwrap();
    assert!((report["pdf_integral"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    let rows = fs::read_to_string(d.join("d/dists.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2002);
    let bad = write(d, "q.json", r#"{"quantiles": [1.5]}"#);
    assert_eq!(pqos(&["dists", "--config", &bad], d).status.code(), Some(2));
}
