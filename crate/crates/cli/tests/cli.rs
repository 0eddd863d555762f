use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vshp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vshp")).args(args).output().expect("binary runs")
}

fn steady() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/steady.toml")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn check_passes_on_shipped_files() {
    let o = vshp(&["check"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 3);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let s = steady();
    for (out, noise) in [(&a, "off"), (&b, "on")] {
        let o = vshp(&["run", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--noise", noise, "--seed", "3"]);
        assert!(o.status.success(), "{}", text(&o));
        assert!(out.join("trace.csv").is_file());
        let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
        assert!(metrics.lines().any(|l| l.starts_with("omega_min: ")), "{metrics}");
    }
    let table = dir.path().join("cmp.csv");
    let o = vshp(&[
        "compare",
        a.join("trace.csv").to_str().unwrap(),
        b.join("trace.csv").to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let t = std::fs::read_to_string(&table).unwrap();
    assert!(t.starts_with("signal,max_abs_diff,integral_abs_diff\n"));
    // The noisy run differs only through the estimator, so the states move.
    let est = t.lines().find(|l| l.starts_with("est_omega,")).unwrap();
    let max_abs: f64 = est.split(',').nth(1).unwrap().parse().unwrap();
    assert!(max_abs > 0.0);
}

#[test]
fn missing_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vshp(&["run", "does/not/exist.toml", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn bad_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.toml");
    std::fs::write(&f, "name = \"bad\"\nduration = 1.0\n").unwrap();
    let o = vshp(&["run", f.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("duration"), "{}", text(&o));
}
