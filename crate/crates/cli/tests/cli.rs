use std::path::Path;
use std::process::{Command, Output};

fn emtdq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emtdq"))
        .args(args)
        .env("EMTDQ_OUT_DIR", dir)
        .output()
        .expect("spawn emtdq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn detect_reports_index_and_findings() {
    let dir = tempfile::tempdir().unwrap();
    let o = emtdq(dir.path(), &["detect", "--case", "wscc9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("index >= 2"), "{text}");
    assert!(text.contains("q=10"), "{text}");
    assert!(text.contains("5 LI-cutsets"), "{text}");

    let o = emtdq(dir.path(), &["detect", "--case", "fig2-loop"]);
    assert!(stdout(&o).contains("1 CV-loop"));

    let o = emtdq(dir.path(), &["detect", "--case", "rl-ladder"]);
    assert!(stdout(&o).contains("findings: none"));

    let o = emtdq(dir.path(), &["detect", "--case", "no-such-case"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn raw_simulation_needs_explicit_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let o = emtdq(dir.path(), &["simulate", "--case", "c1", "--formulation", "raw", "--tstop", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
    let o = emtdq(dir.path(), &["simulate", "--case", "c1", "--allow-index2", "--tstop", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_uniform_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = emtdq(dir.path(), &["simulate", "--case", "c1", "--tstop", "0", "--out", "empty.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("empty.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("t,"));

    let o = emtdq(dir.path(), &["simulate", "--case", "c1", "--tstop", "0.02", "--dt", "1e-3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn compare_needs_shared_variables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "t,x,y\n0,1,2\n0.001,1,2\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "t,x,w\n0,1,5\n0.001,1.5,5\n").unwrap();
    std::fs::write(dir.path().join("c.csv"), "t,w\n0,1\n0.001,1\n").unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let (a, b, c) = (a.to_str().unwrap(), b.to_str().unwrap(), c.to_str().unwrap());

    let o = emtdq(dir.path(), &["compare", a, b]);
    assert_eq!(o.status.code(), Some(2));
    let o = emtdq(dir.path(), &["compare", a, b, "--intersect"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("equivalence.csv").exists());
    let o = emtdq(dir.path(), &["compare", a, c, "--intersect"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plotdata_rejects_unknown_variables() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    std::fs::write(&traj, "t,G1.omega,G1.delta\n0,1,0.1\n0.001,1,0.1\n").unwrap();
    let o = emtdq(dir.path(), &["plotdata", traj.to_str().unwrap(), "--vars", "G1.omgea"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("G1.omega"));
    let o = emtdq(dir.path(), &["plotdata", traj.to_str().unwrap(), "--vars", "G1.omega"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn build_and_bench_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = emtdq(dir.path(), &["build", "--case", "c1..c2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let counts = std::fs::read_to_string(dir.path().join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 3);

    let o = emtdq(dir.path(), &["bench", "--cases", "c1..c2", "--reps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bench = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
    assert!(dir.path().join("scaling.txt").exists());
}
