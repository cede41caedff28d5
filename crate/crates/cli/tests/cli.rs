use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models().join(format!("{name}.json")).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbitroa")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn harmonic_monodromy_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["orbit", "--model", &model("harmonic"), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&dir.path().join("monodromy.json"));
    assert!(m["identity_deviation"].as_f64().unwrap() < 1e-8);
    assert!((m["period"].as_f64().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-8);
    let o = run(&["translin", "--model", &model("harmonic"), "--orbit", &format!("{out}/orbit.json"), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(json(&dir.path().join("ltv.json"))["max_abs_a"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn bad_guess_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let guess = dir.path().join("bad.json");
    std::fs::write(&guess, r#"{"x0":[0.0,0.0],"period":1.0}"#).unwrap();
    let o = run(&["orbit", "--model", &model("vanderpol"), "--guess", guess.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shooting diverged"), "{}", stderr(&o));
}

#[test]
fn exit_codes_separate_no_from_broke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["stabilize", "--model", &model("vanderpol"), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no control inputs"));
    let o = run(&["seed", "--model", &model("vanderpol_reversed"), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("transverse linearization unstable"));
    let o = run(&["verify", "--model", &model("vanderpol"), "--deltas", "1,2", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["verify", "--model", &model("vanderpol"), "--deltas", "1,-2,0", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["translin", "--model", &model("vanderpol"), "--z", "file", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--surfaces"));
}

#[test]
fn verify_and_validate_van_der_pol() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let m = model("vanderpol");
    let o = run(&["verify", "--model", &m, "--vdeg", "2", "--taus", "64", "--max-taus", "64", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().last().unwrap().to_string();
    assert!(line.starts_with("certified: r=") && line.contains("rho=1 taus=64 conditions=256/0"), "{line}");
    let cert = format!("{out}/certificate.json");
    let o = run(&["validate", "--model", &m, "--certificate", &cert, "--samples", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["validate", "--model", &m, "--certificate", &cert, "--samples", "40", "--record", "1", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fraction=1.000"));
    let csv = std::fs::read_to_string(dir.path().join("validation_000.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,phase\n"));
}

#[test]
fn optimized_surfaces_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let m = model("vanderpol");
    let o = run(&["optimize-z", "--model", &m, "--max-iter", "50", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = json(&dir.path().join("surfopt.json"));
    assert!(rep["cost_final"].as_f64().unwrap() < rep["cost_initial"].as_f64().unwrap());
    let surfaces = format!("{out}/surfaces.json");
    let o = run(&["translin", "--model", &m, "--z", "file", "--surfaces", &surfaces, "--out", &format!("{out}/again")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = json(&dir.path().join("surfaces.json"));
    let b = json(&dir.path().join("again/surfaces.json"));
    assert_eq!(a["segments"][0]["z"], b["segments"][0]["z"]);
}

#[test]
fn simulate_closed_loop_from_stabilize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let m = model("vanderpol_reversed");
    let o = run(&["stabilize", "--model", &m, "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&dir.path().join("stabilize.json"));
    assert!(s["open_loop_radius"].as_f64().unwrap() > 1.0);
    assert!(s["closed_loop_radius"].as_f64().unwrap() < 1.0);
    let gain = format!("{out}/gain.json");
    let o = run(&["simulate", "--model", &m, "--gain", &gain, "--x0", "2.2,0.1", "--periods", "6", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sim = json(&dir.path().join("simulation.json"));
    assert!(sim["orbit_distance"].as_f64().unwrap() < 1e-3, "{sim}");
    // Without feedback the reversed oscillator leaves the orbit.
    let o = run(&["simulate", "--model", &m, "--x0", "-2.2,-0.1", "--periods", "1", "--out", &format!("{out}/open")]);
    let escaped = match o.status.code() {
        Some(0) => json(&dir.path().join("open/simulation.json"))["orbit_distance"].as_f64().unwrap() > 1e-2,
        Some(1) => stderr(&o).contains("non-finite"),
        _ => false,
    };
    assert!(escaped, "{}", stderr(&o));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = model("vanderpol");
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        let o = run(&["pipeline", "--model", &m, "--vdeg", "2", "--max-taus", "64", "--samples", "30", "--seed", "3", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7);
    for n in names {
        let x = std::fs::read(a.path().join(&n)).unwrap();
        let y = std::fs::read(b.path().join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }
}
