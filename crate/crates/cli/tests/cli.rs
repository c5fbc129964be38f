use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pemcell"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn trivial_ledger_passes_with_margin_root2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ledger", "--strict"], &configs().join("trivial.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    let l = &r["ledger"];
    assert_eq!(l["verdict"], Value::Bool(true));
    let root2 = l["root2"].as_f64().unwrap();
    assert!(root2 > 0.0);
    assert_eq!(l["margin"].as_f64().unwrap(), root2);
    assert_eq!(r["subcommand"], "ledger");
}

#[test]
fn desk_ledger_verdict_fails_only_under_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("desk.toml");
    let o = run(&["ledger"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["passed"], Value::Bool(false));
    let o = run(&["ledger", "--strict"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("desk_scaled.toml");
    let mut texts = Vec::new();
    for _ in 0..2 {
        let o = run(&["ledger", "--seed", "7"], &cfg, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"timestamp_unix\"")).collect();
        texts.push(kept.join("\n"));
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(report(dir.path())["seed"], 7);
}

#[test]
fn trivial_simulation_writes_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--strict"], &configs().join("trivial.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let vtk = std::fs::read_to_string(dir.path().join("fields.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile"));
    let csv = std::fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    assert!(csv.starts_with("x,y,subdomain,u_x,u_y,p,rho_1,rho_2,theta,phi"));
    let r = report(dir.path());
    assert_eq!(r["solve"]["status"], "converged");
}

#[test]
fn bad_configs_exit_with_status_4() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[geometry]\nnx = 4\nny = 16\nwidth = 3.0\n").unwrap();
    let o = run(&["ledger"], &unknown, dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[geometry]\nnx = 0\n\n[solver]\nomega = 2.0\n").unwrap();
    let o = run(&["ledger"], &bad, dir.path());
    assert_eq!(o.status.code(), Some(4));

    let o = run(&["ledger"], &dir.path().join("missing.toml"), dir.path());
    assert_eq!(o.status.code(), Some(4));
}
