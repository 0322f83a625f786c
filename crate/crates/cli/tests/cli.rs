use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn credo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credo"))
        .current_dir(dir)
        .env_remove("CREDO_OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = credo(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn fit_calibrate_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--scenario", "2", "--n", "400", "--seed", "1", "--out", "train.csv"]);
    ok(d, &["generate", "--scenario", "2", "--n", "200", "--seed", "2", "--out", "cal.csv"]);
    ok(d, &["generate", "--scenario", "2", "--n", "100", "--seed", "3", "--out", "test.csv"]);
    ok(d, &["fit", "--data", "train.csv", "--draws", "300", "--out", "model.json"]);

    for method in ["credo", "credo-adaptive", "cqr"] {
        let cal = format!("{method}.json");
        let pred = format!("{method}.csv");
        let msg = ok(d, &["calibrate", "--model", "model.json", "--data", "cal.csv", "--method", method, "--out", &cal]);
        assert!(msg.contains("tau_hat"));
        ok(d, &["predict", "--model", "model.json", "--calibration", &cal, "--data", "test.csv", "--out", &pred]);

        let (header, rows) = read_csv(&d.join(&pred));
        assert_eq!(header.first().map(String::as_str), Some("x"));
        assert_eq!(header.last().map(String::as_str), Some("covered"));
        assert_eq!(rows.len(), 100);
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        for row in &rows {
            let (lo, hi, y): (f64, f64, f64) = (
                row[col("lower")].parse().unwrap(),
                row[col("upper")].parse().unwrap(),
                row[col("y")].parse().unwrap(),
            );
            assert_eq!(row[col("covered")], (lo <= y && y <= hi).to_string());
            assert_eq!(row[col("gamma")].is_empty(), method == "cqr");
        }
    }
}

#[test]
fn predict_without_target_omits_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--scenario", "1", "--n", "200", "--out", "train.csv"]);
    ok(d, &["fit", "--data", "train.csv", "--draws", "200", "--out", "model.json"]);
    ok(d, &["calibrate", "--model", "model.json", "--data", "train.csv", "--method", "credo", "--out", "cal.json"]);
    fs::write(d.join("new.csv"), "x\n0.0\n0.5\n-1.0\n").unwrap();
    ok(d, &["predict", "--model", "model.json", "--calibration", "cal.json", "--data", "new.csv", "--out", "p.csv"]);
    let (header, rows) = read_csv(&d.join("p.csv"));
    assert!(!header.iter().any(|h| h == "covered" || h == "y"));
    assert_eq!(rows.len(), 3);
}

#[test]
fn experiment_then_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"data": {"kind": "scenario", "id": 2, "n": 300}, "repetitions": 5, "output_dir": "from-config"}"#,
    )
    .unwrap();
    let stdout = ok(d, &["experiment", "--config", "cfg.json", "--repetitions", "2", "--methods", "credo,cqr"]);
    assert!(stdout.contains("credo") && stdout.contains("cqr") && !stdout.contains("credo-adaptive"));

    let report = d.join("from-config");
    let (_, metrics) = read_csv(&report.join("metrics.csv"));
    assert_eq!(metrics.len(), 4);
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["config"]["repetitions"], 2);

    ok(d, &["plot-data", "--report", "from-config"]);
    for f in ["plot_intervals.csv", "plot_decomposition.csv", "plot_gamma_profile.csv"] {
        let text = fs::read_to_string(report.join(f)).unwrap();
        assert!(text.starts_with("# schema:"), "{f}");
        assert!(text.lines().count() > 2, "{f}");
    }
}

#[test]
fn output_flag_and_env_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"data": {"kind": "scenario", "id": 1, "n": 200}, "repetitions": 1, "methods": ["cqr"], "output_dir": "cfg-dir"}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_credo"))
        .current_dir(d)
        .env("CREDO_OUTPUT_DIR", "env-dir")
        .args(["experiment", "--config", "cfg.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("env-dir/metrics.csv").exists());
    assert!(!d.join("cfg-dir").exists());

    ok(d, &["experiment", "--config", "cfg.json", "--output", "flag-dir"]);
    assert!(d.join("flag-dir/metrics.csv").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.json"), r#"{"repetitons": 3}"#).unwrap();
    let out = credo(d, &["experiment", "--config", "cfg.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = credo(d, &["fit", "--data", "missing.csv", "--out", "m.json"]);
    assert!(!out.status.success());

    ok(d, &["generate", "--scenario", "1", "--n", "50", "--out", "t.csv"]);
    let out = credo(d, &["fit", "--data", "t.csv", "--alpha", "1.5", "--out", "m.json"]);
    assert!(!out.status.success());
    let out = credo(d, &["generate", "--scenario", "9", "--out", "x.csv"]);
    assert!(!out.status.success());
}
