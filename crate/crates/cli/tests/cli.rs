use std::fs;
use std::process::{Command, Output};

fn tmonarch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmonarch"))
        .args(args)
        .output()
        .expect("run tmonarch")
}

fn write_config(dir: &std::path::Path, text: &str) -> String {
    let p = dir.join("c.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem.shape = 2,3,4\nsweep.methods = topk, monarch-project\nsweep.densities = 0.5\n");
    let out = dir.path().join("r.csv");
    let o = tmonarch(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7", "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,seed,f,h,w,method,config_descriptor,density,params,iterations,mse,objective_final,wall_ns"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("7")));
    let summary = fs::read_to_string(dir.path().join("r.csv.summary.json")).unwrap();
    assert!(summary.contains("\"buckets\""));
}

#[test]
fn sweep_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem.shape = 2,3,3\nsweep.methods = topk\nsweep.densities = 0.25\n");
    let o = tmonarch(&["sweep", "--config", &cfg, "--quiet"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}

#[test]
fn align_and_iters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "problem.shape = 2,3,3\nsweep.iterations = 1,10\n");
    let out = dir.path().join("a.csv");
    let o = tmonarch(&["align", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().any(|l| l.contains(",fh|w,6,3,true,")));
    assert!(csv.lines().any(|l| l.contains(",flat:9x2,9,2,false,")));

    let out = dir.path().join("i.csv");
    let o = tmonarch(&["iters", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.bogus = 1\n");
    let o = tmonarch(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    let cfg = write_config(dir.path(), "problem.shape = 4,6,8\nsweep.methods = monarch-project\nsweep.densities = 0.05\n");
    let o = tmonarch(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0.1667"));
    assert_eq!(tmonarch(&["verify", "--suites", "99"]).status.code(), Some(2));
}

#[test]
fn verify_single_suite() {
    let o = tmonarch(&["verify", "--suites", "12"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("suite 12 PASS"), "{out}");
}
