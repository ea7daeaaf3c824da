use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn xfwi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfwi"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn equiv_check_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfwi(&["equiv-check"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("equivalence.csv"));
    assert_eq!(rows.len(), 20);
    let gap = column(&header, "rel_gap");
    for row in &rows {
        assert!(row[gap].parse::<f64>().unwrap() <= 1e-10, "{row:?}");
    }

    let m = manifest(dir.path());
    for key in ["command", "config_path", "output_dir", "timestamp", "tool_version", "config_digest", "seed", "status"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m["command"], "equiv-check");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn equiv_check_consistent_data_has_zero_misfit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"instances": 1, "at_truth": true}"#);
    let out = xfwi(&["equiv-check", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let (header, rows) = csv_rows(&dir.path().join("equivalence.csv"));
    assert_eq!(rows.len(), 1);
    for name in ["phi_joint", "phi_reduced"] {
        let v: f64 = rows[0][column(&header, name)].parse().unwrap();
        assert!(v.abs() <= 1e-12, "{name} = {v}");
    }
}

#[test]
fn degenerate_weights_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sigma_m": 0.0, "sigma_p": 0.0}"#);
    let out = xfwi(&["equiv-check", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate weights"));
    assert_eq!(manifest(dir.path())["status"], "config-error");
    assert!(!dir.path().join("equivalence.csv").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"nt": 64, "velocity_typo": 2.0}"#);
    let out = xfwi(&["scan", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("velocity_typo"));
}

#[test]
fn grad_check_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfwi(&["grad-check"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("gradient.csv"));
    assert_eq!(rows.len(), 20);
    for name in ["component_k", "analytic", "fd_central", "rel_err", "paper_variant", "paper_variant_rel_err"] {
        column(&header, name);
    }
    let err = column(&header, "rel_err");
    assert!(rows.iter().all(|r| r[err].parse::<f64>().unwrap() <= 1e-4));
}

#[test]
fn grad_check_at_truth_has_zero_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"at_truth": true}"#);
    let out = xfwi(&["grad-check", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("gradient.csv"));
    let analytic = column(&header, "analytic");
    for row in &rows {
        assert!(row[analytic].parse::<f64>().unwrap().abs() <= 1e-10, "{row:?}");
    }
}

#[test]
fn kernel_writes_nine_panels_with_expected_lags() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfwi(&["kernel"], dir.path());
    assert!(out.status.success());
    let panels: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            (name.starts_with("kernel_") && name != "kernel_peaks.csv").then_some(name)
        })
        .collect();
    assert_eq!(panels.len(), 9, "{panels:?}");

    let (header, rows) = csv_rows(&dir.path().join("kernel_peaks.csv"));
    let (i, j) = (column(&header, "i"), column(&header, "j"));
    let (expected, delta) = (column(&header, "expected_lag"), column(&header, "abs_delta"));
    for row in &rows {
        let e: f64 = row[expected].parse().unwrap();
        assert!(row[delta].parse::<f64>().unwrap() <= 0.004 + 1e-12);
        if row[i] == row[j] {
            assert_eq!(e, 0.0);
        }
        if row[i] == "1" && row[j] == "3" {
            assert!((e + 0.2).abs() < 1e-12);
        }
    }
}

#[test]
fn scan_finds_truth_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(xfwi(&["scan"], a.path()).status.success());
    assert!(xfwi(&["scan"], b.path()).status.success());
    assert_eq!(
        fs::read(a.path().join("scan.csv")).unwrap(),
        fs::read(b.path().join("scan.csv")).unwrap()
    );

    let summary: Value = serde_json::from_str(&fs::read_to_string(a.path().join("scan_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["extended_basin_wider"], true);
    for regime in summary["regimes"].as_array().unwrap() {
        assert_eq!(regime["argmin"], 2.0);
        assert_eq!(regime["success_fraction"], 1.0);
    }
    let (header, rows) = csv_rows(&a.path().join("scan.csv"));
    assert_eq!(rows.len(), 101);
    assert_eq!(header.last().unwrap(), "status");
}

#[test]
fn scan_general_adds_columns() {
    let dir = tempfile::tempdir().unwrap();
    assert!(xfwi(&["scan", "--regime", "general"], dir.path()).status.success());
    let (header, _) = csv_rows(&dir.path().join("scan.csv"));
    column(&header, "phi_general_norm");
}

#[test]
fn extsrc_at_true_velocity_needs_no_extension() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfwi(&["extsrc", "--c", "2.0"], dir.path());
    assert!(out.status.success());
    let (header, rows) = csv_rows(&dir.path().join("extsrc_c2.0.csv"));
    let (f, q) = (column(&header, "f"), column(&header, "q"));
    let fmax = rows.iter().map(|r| r[f].parse::<f64>().unwrap().abs()).fold(0.0, f64::max);
    let qmax = rows.iter().map(|r| r[q].parse::<f64>().unwrap().abs()).fold(0.0, f64::max);
    assert!(fmax <= 1e-10 * qmax, "{fmax}");
    assert!(dir.path().join("extdata_c2.0.csv").exists());
}

#[test]
fn extsrc_default_velocities() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfwi(&["extsrc"], dir.path());
    assert!(out.status.success());
    for tag in ["1.8", "2.2"] {
        assert!(dir.path().join(format!("extsrc_c{tag}.csv")).exists());
        assert!(dir.path().join(format!("extdata_c{tag}.csv")).exists());
    }
    let (header, rows) = csv_rows(&dir.path().join("extdata_c1.8.csv"));
    assert_eq!(rows.len(), 3 * 512);
    assert_eq!(header, ["t", "receiver_id", "observed", "clean_model", "fitted"]);
}
