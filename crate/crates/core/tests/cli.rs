use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bopdmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bopdmd")).args(args).output().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn ok(args: &[&str]) {
    let out = bopdmd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn toy(dir: &Path, sigma: &str, seed: &str) -> String {
    let data = path(dir, "data.csv");
    ok(&["generate", "toy", "--sigma", sigma, "--seed", seed, "--out", &data]);
    data
}

#[test]
fn noise_free_report_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path(), "0", "0");
    let model = path(dir.path(), "model.json");
    ok(&["fit", "--method", "opt", "--rank", "3", "--in", &data, "--out", &model]);
    let report = path(dir.path(), "report.json");
    ok(&["report", "--model", &model, "--truth-omegas", &path(dir.path(), "omegas.json"), "--out", &report]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(v["max_error"].as_f64().unwrap() <= 1e-6, "{v}");
}

#[test]
fn bagged_fit_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path(), "0.005", "3");
    let model = path(dir.path(), "model.json");
    ok(&["fit", "--method", "bop", "--rank", "3", "--p", "20", "--k", "100", "--seed", "3", "--in", &data, "--out", &model]);
    let stats = bopdmd::io::load_table(dir.path().join("eigen_stats.csv")).unwrap();
    assert_eq!(stats.rows.len(), 3);
    let var = bopdmd::io::load_table(dir.path().join("mode_variance.csv")).unwrap();
    assert_eq!(var.rows.len(), 128);
    let fc = path(dir.path(), "fc.csv");
    let var_out = path(dir.path(), "var.csv");
    ok(&[
        "forecast", "--model", &model, "--t-start", "1", "--t-end", "1.5", "--steps", "6", "--seed", "1", "--out", &fc,
        "--var-out", &var_out,
    ]);
    let mean = bopdmd::io::load_csv(&fc).unwrap();
    assert_eq!(mean.values().shape(), (128, 6));
}

#[test]
fn thread_count_leaves_output_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path(), "0.01", "5");
    let fit = |threads: &str, name: &str| {
        let out = path(dir.path(), name);
        let es = path(dir.path(), &format!("{name}.eig.csv"));
        let mv = path(dir.path(), &format!("{name}.var.csv"));
        ok(&[
            "fit", "--method", "bop", "--rank", "3", "--p", "30", "--k", "24", "--seed", "9", "--freeze-seed", "--threads",
            threads, "--in", &data, "--out", &out, "--eigen-stats", &es, "--mode-variance", &mv,
        ]);
        let archive: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
        // metadata records the thread count itself
        (archive["payload"].clone(), fs::read_to_string(es).unwrap(), fs::read_to_string(mv).unwrap())
    };
    let (a, b) = (fit("1", "a.json"), fit("4", "b.json"));
    assert!(a == b, "outputs differ between thread counts");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bopdmd(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(bopdmd(&["--help"]).status.code(), Some(0));
}

#[test]
fn forecast_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path(), "0", "0");
    let model = path(dir.path(), "model.json");
    ok(&["fit", "--method", "exact", "--rank", "3", "--in", &data, "--out", &model]);
    let out = bopdmd(&["forecast", "--model", &model, "--t-start", "1", "--t-end", "2", "--steps", "5", "--out", &path(dir.path(), "f.csv")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bagging_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path(), "0", "0");
    let out = bopdmd(&["fit", "--method", "bop", "--rank", "3", "--p", "20", "--in", &data, "--out", &path(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_csv_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "bad.csv");
    fs::write(&data, "t,0,0.1,0.2\nx0,1,2,oops\n").unwrap();
    let out = bopdmd(&["fit", "--method", "exact", "--rank", "1", "--in", &data, "--out", &path(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn ragged_csv_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "bad.csv");
    fs::write(&data, "t,0,0.1,0.2\nx0,1,2\n").unwrap();
    let out = bopdmd(&["fit", "--method", "exact", "--rank", "1", "--in", &data, "--out", &path(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_refuses_non_uniform_times() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "gap.csv");
    fs::write(&data, "t,0,0.1,0.2,0.5,0.6\nx0,1,2,3,4,5\nx1,1,1,1,1,1\n").unwrap();
    let out = bopdmd(&["fit", "--method", "exact", "--rank", "1", "--in", &data, "--out", &path(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bopdmd(&["fit", "--method", "opt", "--rank", "3", "--in", &path(dir.path(), "nope.csv"), "--out", &path(dir.path(), "m.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oscillator_generator_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "osc.csv");
    ok(&["generate", "oscillator", "--freqs", "1.0", "--decays", "0", "--m", "40", "--t-end", "8", "--out", &data]);
    let snaps = bopdmd::io::load_csv(&data).unwrap();
    assert_eq!(snaps.values().shape(), (32 * 16, 40));
    assert!(snaps.is_real());
}
