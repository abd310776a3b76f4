use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tiled_monarch::bench::{
    run_alignment_ablation, run_iteration_ablation, run_sweep, write_alignment_csv, SweepConfig,
    SweepOutput,
};
use tiled_monarch::verify::{run_suite, SUITE_IDS};
use tiled_monarch::Error;

#[derive(Parser)]
#[command(name = "tmonarch", version, about = "Monarch attention approximation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; `sweep` falls back to `output.path`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of `sweep.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Error-versus-density sweep over methods, budgets and seeds.
    Sweep(Common),
    /// Projection error of the positional map under aligned and misaligned blockings.
    Align(Common),
    /// Solver error versus iteration count.
    Iters(Common),
    /// Run the property suites and print one line per suite.
    Verify {
        /// Comma-separated suite ids (default: all).
        #[arg(long, value_delimiter = ',')]
        suites: Vec<u8>,
        #[arg(long)]
        quiet: bool,
    },
}

fn load(common: &Common) -> Result<SweepConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<(), Error>) -> Result<(), Error> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn summary_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

fn emit(out: &SweepOutput, path: Option<&Path>, quiet: bool) -> Result<(), Error> {
    with_output(path, |w| out.write_csv(w))?;
    let json = out.summary_json()?;
    match path {
        Some(p) => {
            std::fs::write(summary_path(p), json + "\n")?;
            if !quiet {
                eprintln!("wrote {} rows to {}", out.rows.len(), p.display());
            }
        }
        None if !quiet => eprintln!("{json}"),
        None => {}
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Sweep(common) => {
            let cfg = load(&common)?;
            let out = run_sweep(&cfg)?;
            emit(&out, common.out.as_deref().or(cfg.output.as_deref()), common.quiet)?;
        }
        Command::Iters(common) => {
            let cfg = load(&common)?;
            let out = run_iteration_ablation(&cfg)?;
            emit(&out, common.out.as_deref(), common.quiet)?;
        }
        Command::Align(common) => {
            let cfg = load(&common)?;
            let rows = run_alignment_ablation(cfg.shape, &cfg.kernels)?;
            with_output(common.out.as_deref(), |w| write_alignment_csv(w, cfg.shape, &rows))?;
            if !common.quiet {
                for r in &rows {
                    eprintln!("{:<14} aligned={:<5} mse={:.3e}", r.config.to_string(), r.aligned, r.mse);
                }
            }
        }
        Command::Verify { suites, quiet } => {
            let ids = if suites.is_empty() { SUITE_IDS.to_vec() } else { suites };
            if let Some(bad) = ids.iter().find(|id| !SUITE_IDS.contains(id)) {
                return Err(Error::Invalid(format!("no suite {bad}; suites are 1..=12")));
            }
            let mut failed = 0;
            for id in ids {
                let r = run_suite(id);
                if !r.passed {
                    failed += 1;
                }
                if !quiet || !r.passed {
                    let status = if r.passed { "PASS" } else { "FAIL" };
                    println!(
                        "suite {:>2} {status} ({:.2}s) {}: {}",
                        r.id,
                        r.elapsed.as_secs_f64(),
                        r.name,
                        r.detail
                    );
                    for w in &r.warnings {
                        println!("    warning: {w}");
                    }
                }
            }
            if failed > 0 {
                println!("{failed} suite(s) failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
