use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_copolymer")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn free_energy_of_zero_charges() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "zero.json", r#"{"p": 0.3, "n_max": 4096}"#);
    let out = run(&["free-energy", "--input", &input]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["regime"], "critical");
    assert_eq!(v["f"], 0.0);
    assert!((v["delta"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn classify_and_limits() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "pl.json", r#"{"p": 0.3, "omega_minus": [0.8, -0.8], "omega_zero": [-2.5], "n_max": 16384}"#);
    let out = run(&["classify", "--input", &input]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["regime"], "strictly_delocalized");
    assert_eq!(v["p_less"], true);

    let out = run(&["limits", "--input", &input, "--n-cut", "4096"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let kernels = v["kernels"].as_array().unwrap();
    assert_eq!(kernels.len(), 4);
    for k in kernels {
        for s in k["row_sums"].as_array().unwrap() {
            assert!((s.as_f64().unwrap() - 1.0).abs() < 1e-10);
        }
    }
    assert_eq!(v["gibbs"]["entries"].as_array().unwrap().len(), 4);
}

#[test]
fn partition_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "pin.json", r#"{"p": 0.25, "omega_zero": [0.4], "n_max": 1024}"#);
    let prefix = dir.path().join("z");
    let out = run(&["partition", "--input", &input, "--N", "100", "--every", "30", "--output", prefix.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("z.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,logZc,logZf,logZplus,logZminus");
    let ns: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["30", "60", "90", "100"]);
}

#[test]
fn phase_diagram_respects_the_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "pd.json", r#"{"omega": [1, -1], "p": 0.3, "n_max": 8192}"#);
    let out = run(&["phase-diagram", "--input", &input, "--beta-grid", "0:1:0.25", "--h-grid=-0.1:0.1:0.05"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    let header = rdr.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["beta", "h", "delta", "F_gauged", "f_raw", "rho_fd", "rho_mc", "regime"]);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let h: f64 = rec[1].parse().unwrap();
        let f: f64 = rec[4].parse().unwrap();
        assert!(f >= h.abs() - 1e-9);
        rows += 1;
    }
    assert_eq!(rows, 25);
}

#[test]
fn samples_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "c.json", r#"{"p": 0.3, "omega_plus": [0.2, -0.1], "omega_zero": [0.3], "n_max": 1024}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for prefix in [&a, &b] {
        let out = run(&["sample", "--input", &input, "--N", "200", "--samples", "5", "--seed", "9", "--output", prefix.to_str().unwrap()]);
        assert!(out.status.success());
    }
    for suffix in ["_paths.csv", "_summary.json"] {
        let x = std::fs::read(format!("{}{suffix}", a.display())).unwrap();
        let y = std::fs::read(format!("{}{suffix}", b.display())).unwrap();
        assert_eq!(x, y);
    }
    let out = run(&["sample", "--input", &input, "--N", "200", "--infinite", "--samples", "3"]);
    assert!(out.status.success());
}

#[test]
fn verify_passes_with_the_default_seed() {
    let out = run(&["verify", "--instances", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"p": 0.7}"#);
    let out = run(&["free-energy", "--input", &bad]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "invalid_parameter");

    let nan = write(dir.path(), "nan.json", r#"{"p": 0.3, "omega_zero": [1e400]}"#);
    let out = run(&["classify", "--input", &nan]);
    assert!(!out.status.success());

    let pd = write(dir.path(), "pd.json", r#"{"omega": [1, -0.5], "p": 0.3}"#);
    let out = run(&["phase-diagram", "--input", &pd, "--beta-grid", "0:1:0.5", "--h-grid", "0:0.1:0.1"]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "invalid_parameter");
}
