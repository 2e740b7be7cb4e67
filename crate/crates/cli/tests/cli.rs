use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use shf_core::exterior::Frame;
use shf_core::stable::{flat_omega, flat_psi};

fn shf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pair(dir: &Path, name: &str, psi_scale: f64) -> String {
    let doc = json!({
        "omega": flat_omega(Frame::Coordinate),
        "psi": flat_psi(Frame::Coordinate).scale(psi_scale),
    });
    let path = dir.join(name);
    std::fs::write(&path, doc.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let flat = write_pair(dir.path(), "flat.json", 1.0);
    let o = shf(&["validate", &flat]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["valid"], true);
    assert_eq!(report["P"], -4.0);

    let doubled = write_pair(dir.path(), "double.json", 2.0);
    let o = shf(&["validate", &doubled]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("check=normalization"));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["residuals"]["normalization"].as_f64().unwrap() > 1.0);

    let truncated = dir.path().join("bad.json");
    let text = std::fs::read_to_string(&flat).unwrap();
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    let o = shf(&["validate", truncated.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error=malformed_json"));
}

#[test]
fn ts3_cosh_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cosh.csv");
    let o = shf(&[
        "ts3",
        "--f1",
        "cosh",
        "--t-max",
        "3",
        "--samples",
        "601",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    let col = header.iter().position(|h| *h == "scal_closed").unwrap();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 601);
    let at_one = rows.iter().find(|r| (r[0] - 1.0).abs() < 1e-12).unwrap();
    assert!((at_one[col] + 5.7965).abs() < 1e-4);
    assert!(!csv.contains('\r'));
}

#[test]
fn ts3_failures() {
    let o = shf(&["ts3", "--f1", "-1", "--t-max", "1", "--samples", "101"]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("first_violation_t=0.5"),
        "{}",
        stderr(&o)
    );
    let o = shf(&["ts3", "--f1", "cosh(t", "--t-max", "1", "--samples", "11"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("error=parse position=6"));
    let o = shf(&["ts3", "--f1", "cosh", "--samples", "10"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn torus_reports() {
    let o = shf(&[
        "torus",
        "--a",
        "sin(6.283185307179586*x1)",
        "--b",
        "0",
        "--c",
        "0",
        "--grid",
        "16",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["strict"], true);
    assert_eq!(report["dim_lower_bound"], 5);
    assert_eq!(report["per_field"]["x1"]["preserved"], false);

    let o = shf(&["torus", "--a", "0", "--b", "0", "--c", "0", "--grid", "8"]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["strict"], false);
    assert_eq!(report["half_flat"]["sigma_sup"], 0.0);

    let o = shf(&["torus", "--a", "x1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error=periodicity"));
}

#[test]
fn stenzel_run_is_scalar_flat_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a.csv", "b.csv"]
        .iter()
        .map(|n| dir.path().join(n))
        .collect();
    for p in &paths {
        let o = shf(&[
            "stenzel",
            "--f1-at-0",
            "-1",
            "--t-max",
            "2",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    let text = String::from_utf8(a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "scal_sigma").unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        if v[0] >= 0.1 {
            assert!(v[col].abs() < 1e-5);
        }
    }
    let o = shf(&["stenzel", "--f1-at-0", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn json_output_is_sorted_and_repeatable() {
    let run = || {
        shf(&[
            "ts3",
            "--f1",
            "-2*cosh(t)",
            "--t-max",
            "1",
            "--samples",
            "11",
            "--format",
            "json",
        ])
        .stdout
    };
    let first = run();
    assert_eq!(first, run());
    let v: Value = serde_json::from_slice(&first).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["admissibility", "samples", "source"]);
    assert_eq!(v["source"]["kind"], "expression");
    let o = shf(&["torus", "--format", "csv"]);
    assert_eq!(code(&o), 2);
    let o = shf(&["ts3", "--f1", "cosh", "--tol", "-1"]);
    assert_eq!(code(&o), 2);
}
