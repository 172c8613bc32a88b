use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "check_name,preset,params_json,lhs,rhs,margin,stderr,pass";

fn hypok(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hypok"));
    cmd.args(args).env_remove("HYPOK_SEED");
    if let Some(s) = seed {
        cmd.env("HYPOK_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_writes_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = hypok(&["verify", "kernel", "--preset", "kolmogorov", "--output", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some(HEADER));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(dir.path().join("r_plot.csv").exists());

    let o = hypok(&["report", "--input", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("kernel_explicit"));
}

#[test]
fn empty_config_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.csv");
    let cfg = write(dir.path(), "c.json", &format!(r#"{{"preset": "heat", "dim": 2, "checks": [], "output_path": "{}"}}"#, out.display()));
    let o = hypok(&["verify", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out).unwrap(), format!("{HEADER}\n"));
}

#[test]
fn config_errors_exit_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"preset": "custom", "q": [[1, 1], [0, 1]], "b": [[0, 0], [0, 0]]}"#);
    let o = hypok(&["verify", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q:"));

    let cfg = write(dir.path(), "broken.json", "{ preset: ");
    assert_eq!(hypok(&["verify", "--config", &cfg], None).status.code(), Some(2));
    assert_eq!(hypok(&["verify", "--config", "/nonexistent/x.json"], None).status.code(), Some(2));
    assert_eq!(hypok(&["verify", "no_such_check"], None).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_2() {
    let o = hypok(&["verify", "gramian_identity", "--output", "/nonexistent/dir/r.csv"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_rows_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "r.csv", &format!("{HEADER}\nharnack,heat,{{}},2,1,-1,0,false\nharnack,heat,{{}},0,1,1,0,true\n"));
    let o = hypok(&["report", "--input", &path], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("1 failed"));
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = hypok(&["verify", "gaussian_poincare", "--count", "5", "--output", out.to_str().unwrap()], Some(seed));
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", "7"), run("b.csv", "7"));
    assert_ne!(run("a.csv", "7"), run("c.csv", "8"));
    assert_eq!(hypok(&["verify", "gramian_identity"], Some("-1")).status.code(), Some(2));
}

#[test]
fn eval_verbs_print_json() {
    let o = hypok(&["kernel", "eval", "--preset", "kolmogorov", "--x", "0,0", "--y", "0.1,-0.2", "--t", "1"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);

    let o = hypok(&["frac", "apply", "--dim", "1", "--s", "0.5", "--x", "0"], None);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // (-d^2/dx^2)^{1/2} e^{-x^2} at 0 is 2 / sqrt(pi)
    assert!((v["value"].as_f64().unwrap() - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-6);

    let o = hypok(&["besov", "perimeter", "--dim", "1", "--box", "0:1", "--s", "0.25"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["perimeter"].as_f64().unwrap() > 0.0);

    assert_eq!(hypok(&["kernel", "eval", "--x", "0", "--y", "0,0", "--t", "1"], None).status.code(), Some(2));
}

#[test]
fn harnack_scan_passes() {
    let o = hypok(&["harnack", "scan", "--a", "0.5", "--n", "10", "--preset", "kolmogorov"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("10 passed"));
}
