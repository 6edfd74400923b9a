use std::fs;
use std::path::Path;
use std::process::Command;

use isaacs_fd_cli::{run, CliError, Manifest, StudyKind};

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn rates_heat_1d_three_steps() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "heat_1d"},
            "grid": {"horizon": 0.25, "h": [0.125, 0.0625, 0.03125]}
        }"#,
    );
    let out = dir.path().join("out");
    let manifest = run(StudyKind::Rates, &config, Some(&out)).unwrap();
    let rows = read_csv(&out.join("rates.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], "");
    for row in &rows[1..] {
        assert!(row[2].parse::<f64>().unwrap() > 0.0);
    }
    let exponent = manifest.results["fitted_exponent"].as_f64().unwrap();
    assert!(exponent > 0.0, "{exponent}");
    assert!(manifest.solver_stats.iter().all(|s| s.certified));

    let on_disk: Manifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn zero_data_solves_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "heat_1d_source", "source": 0},
            "grid": {"horizon": 0.25, "h": [0.125]}
        }"#,
    );
    run(StudyKind::Solve, &config, Some(dir.path())).unwrap();
    let rows = read_csv(&dir.path().join("solve.csv"));
    assert!(!rows.is_empty());
    for row in rows {
        assert_eq!(row.len(), 3);
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn zero_horizon_is_rejected_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "heat_1d"},
            "grid": {"horizon": 0, "h": [0.125]}
        }"#,
    );
    match run(StudyKind::Solve, &config, Some(dir.path())) {
        Err(CliError::ConfigParse { field, .. }) => assert_eq!(field, "grid.horizon"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(!dir.path().join("solve.csv").exists());
}

#[test]
fn manifest_config_reproduces_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "isaacs_game", "dim": 1, "amplitude": 1.0},
            "grid": {"horizon": 0.25, "h": [0.125, 0.0625]},
            "solver": {"sweep_mode": "simultaneous", "slice_tolerance": 1e-11}
        }"#,
    );
    let first = dir.path().join("first");
    let manifest = run(StudyKind::Rates, &config, Some(&first)).unwrap();

    let echoed = dir.path().join("echoed.json");
    fs::write(&echoed, serde_json::to_string(&manifest.config).unwrap()).unwrap();
    let second = dir.path().join("second");
    run(StudyKind::Rates, &echoed, Some(&second)).unwrap();

    let a = fs::read(first.join("rates.csv")).unwrap();
    let b = fs::read(second.join("rates.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kgap_and_regularity_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let kgap = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "heat_1d_source", "source": 1},
            "grid": {"horizon": 0.25, "h": [0.125]},
            "study": {"kind": "kgap", "k_list": [1, 4, 16]}
        }"#,
    );
    let m = run(StudyKind::Kgap, &kgap, Some(dir.path())).unwrap();
    let rows = read_csv(&dir.path().join("kgap.csv"));
    assert_eq!(rows.len(), 3);
    let gaps: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + m.results["floor"].as_f64().unwrap()));

    let reg = write_config(
        dir.path(),
        r#"{
            "problem": {"family": "heat_1d"},
            "grid": {"horizon": 0.25, "h": [0.0625]},
            "study": {"kind": "regularity", "epsilon_list": [0.375, 0.25, 0.125], "chi": 0.5}
        }"#,
    );
    let m = run(StudyKind::Regularity, &reg, Some(dir.path())).unwrap();
    assert_eq!(read_csv(&dir.path().join("regularity.csv")).len(), 3);
    assert!(m.results["log_log_slope"].is_number());
}

#[test]
fn binary_reports_errors_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"problem": {"family": "heat_1d"}, "grid": {"horizon": -1, "h": [0.125]}}"#,
    );
    let out = Command::new(env!("CARGO_BIN_EXE_isaacs-fd"))
        .args(["solve", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert!(stderr.contains("grid.horizon"), "{stderr}");
}

#[test]
fn binary_respects_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"problem": {"family": "heat_1d"}, "grid": {"horizon": 0.25, "h": [0.125]}}"#,
    );
    let status = Command::new(env!("CARGO_BIN_EXE_isaacs-fd"))
        .env("ISAACS_FD_THREADS", "2")
        .args(["solve", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.threads, 2);

    let bad = Command::new(env!("CARGO_BIN_EXE_isaacs-fd"))
        .env("ISAACS_FD_THREADS", "zero")
        .args(["solve", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sample_configs_and_schema_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("config.schema.json")).unwrap()).unwrap();
    assert_eq!(schema["type"], "object");
    let mut seen = 0;
    for entry in fs::read_dir(root.join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let config = isaacs_fd_cli::load_config(&path).unwrap();
        let kind = config.study_kind().unwrap();
        config.resolve(kind).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4);
}
