use std::path::Path;
use std::process::{Command, Output};

use multihom::io;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multihom"))
        .args(args)
        .env("MULTIHOM_OUT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SINGLE: &str = r#"
[scales]
spatial = ["eps"]
temporal = ["eps^2"]

[flux]
family = "linear"
coefficient = "2+sin(2*pi*y1)"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn classify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE);
    let ok = run(dir.path(), &["classify", &cfg]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(dir.path().join("classification.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][1], "0");
    let rho: f64 = rows[0][2].parse().unwrap();
    assert!((rho - 1.0).abs() < 1e-3, "{rho}");

    let dup = write_config(dir.path(), &SINGLE.replace("spatial = [\"eps\"]", "spatial = [\"eps\", \"eps\"]"));
    assert_eq!(code(&run(dir.path(), &["classify", &dup])), 2);
}

#[test]
fn configuration_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), &format!("{SINGLE}\n[tolerances]\nno_such_key = 1\n"));
    assert_eq!(code(&run(dir.path(), &["classify", &unknown])), 64);
    let bad = write_config(dir.path(), &SINGLE.replace("2+sin(2*pi*y1)", "2+sin(2*pi*"));
    assert_eq!(code(&run(dir.path(), &["verify-flux", &bad])), 64);
    assert_eq!(code(&run(dir.path(), &["classify", "--benchmark", "harmonic", "--set", "scales.spatial=[\"eps^\"]"])), 64);
    assert_eq!(code(&run(dir.path(), &["classify", "--benchmark", "nope"])), 64);
    assert_eq!(code(&run(dir.path(), &["dns-compare", "--benchmark", "laminate2d"])), 64);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(code(&run(dir.path(), &["cell", "--benchmark", "resonance"])), 0);
        assert_eq!(code(&run(dir.path(), &["flux-table", "--benchmark", "quasilinear", "--set", "discretization.R=9"])), 0);
    }
    for file in ["corrector_1.csv", "cell_summary.csv", "flux_table.csv", "flux_table_monotonicity.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn harmonic_corrector_slope_at_origin() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["cell", "--benchmark", "harmonic", "--set", "discretization.M_y=256"]);
    assert_eq!(code(&o), 0);
    let rows = io::read_corrector(&dir.path().join("corrector_1.csv")).unwrap();
    let m = rows.len();
    assert_eq!(m, 256);
    let slope = (rows[1].2 - rows[m - 1].2) * m as f64 / 2.0;
    // b/A(0) - 1 with b = sqrt(3), A(0) = 2
    assert!((slope - (3f64.sqrt() / 2.0 - 1.0)).abs() < 1e-4, "{slope}");
}

#[test]
fn harmonic_flux_table_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["flux-table", "--benchmark", "harmonic", "--set", "discretization.Xi=2", "--set", "discretization.R=5"]);
    assert_eq!(code(&o), 0);
    let t = io::read_flux_table(&dir.path().join("flux_table.csv")).unwrap();
    assert_eq!(t.resolution, 5);
    for k in 0..5 {
        let expect = 3f64.sqrt() * (k as f64 - 2.0);
        assert!((t.node_value(&[k])[0] - expect).abs() < 1e-5);
    }
}

#[test]
fn constant_coefficient_study_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["dns-compare", "--benchmark", "constant"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = io::read_study(&dir.path().join("study.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.error < 1e-9), "{rows:?}");
}

#[test]
fn reproduce_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["reproduce-paper-example"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 6);
    let o = run(dir.path(), &["benchmarks"]);
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l == "two_scale"));
}
