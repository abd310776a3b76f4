//! One line per acceptance criterion; exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use tiled_monarch::verify::run_suite;

/// Wall-clock ceilings in seconds for the suites that carry one.
const RUNTIME_LIMITS: [(u8, f64); 2] = [(1, 5.0), (8, 60.0)];

const CONFIG: &str = "\
problem.shape = 4,6,8
synth.semantic = 5
sweep.methods = topk, lowrank, monarch-project, monarch-solve, tiled-project, tiled-solve
sweep.densities = 0.1667, 0.25, 0.5
sweep.iterations = 1, 10
sweep.seeds = 0, 1, 2
sweep.on_infeasible = skip
";

fn tmonarch(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tmonarch"))
        .args(args)
        .output()
        .expect("run tmonarch")
}

fn cli_determinism(dir: &Path) -> (bool, String) {
    let cfg = dir.join("sweep.cfg");
    fs::write(&cfg, CONFIG).unwrap();
    let mut csvs = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("run{run}.csv"));
        let o = tmonarch(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
        if !o.status.success() {
            return (false, format!("sweep exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
        csvs.push(fs::read(&out).unwrap());
    }
    let identical = csvs[0] == csvs[1];
    let rows = csvs[0].iter().filter(|b| **b == b'\n').count() - 1;

    let full = tmonarch(&["verify", "--quiet"]);
    let all_pass = full.status.code() == Some(0);
    let full_ok = full.status.code() == Some(if all_pass { 0 } else { 1 });
    let passing: Vec<String> = (1..=12u8)
        .filter(|id| run_suite(*id).passed)
        .map(|id| id.to_string())
        .collect();
    let subset = tmonarch(&["verify", "--quiet", "--suites", &passing.join(",")]);
    let subset_ok = subset.status.code() == Some(0);
    let bad = tmonarch(&["sweep", "--config", dir.join("missing.cfg").to_str().unwrap()]);
    let bad_ok = bad.status.code() == Some(2);
    (
        identical && rows > 0 && full_ok && subset_ok && bad_ok,
        format!(
            "two sweeps of {rows} rows byte-identical = {identical}; verify (all) exit {:?}; \
             verify over passing suites [{}] exit {:?}; missing config exit {:?}",
            full.status.code(),
            passing.join(","),
            subset.status.code(),
            bad.status.code()
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for id in 1..=12u8 {
        let start = Instant::now();
        let r = run_suite(id);
        let secs = start.elapsed().as_secs_f64();
        let limit = RUNTIME_LIMITS.iter().find(|(i, _)| *i == id).map(|(_, s)| *s);
        let in_time = limit.is_none_or(|l| secs < l);
        let passed = r.passed && in_time;
        let timing = match limit {
            Some(l) => format!(" [{secs:.2}s, limit {l}s]"),
            None => format!(" [{secs:.2}s]"),
        };
        println!(
            "criterion {id:>2}: {} {}: {}{timing}",
            if passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        for w in &r.warnings {
            println!("              note: {w}");
        }
        if !passed {
            failed.push(id);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let (passed, detail) = cli_determinism(dir.path());
    println!("criterion 13: {} cli determinism and exit codes: {detail}", if passed { "PASS" } else { "FAIL" });
    if !passed {
        failed.push(13);
    }
    if failed.is_empty() {
        println!("all 13 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
