//! Matched-budget sweeps, alignment and iteration ablations.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{OnInfeasible, ProblemSource, SweepConfig};
use super::tensor_io::load_tensors;
use crate::baselines::{budget_match, lowrank_oracle, topk_oracle, ApproxReport, Budget, Method};
use crate::error::{Error, Result};
use crate::layout::{enumerate_aligned_configs, make_tile_plan, BlockConfig, VideoShape};
use crate::monarch::{project, project_tiled, StructuredAttention};
use crate::solver::{solve, solve_tiled, AttentionProblem, SolverConfig};
use crate::synth::{positional_matrix, synthetic_problem, Kernels, SemanticPattern, SyntheticModelSpec};
use crate::tensor::{frobenius_mse, DenseMatrix};

pub const CSV_HEADER: [&str; 13] = [
    "run_id",
    "seed",
    "f",
    "h",
    "w",
    "method",
    "config_descriptor",
    "density",
    "params",
    "iterations",
    "mse",
    "objective_final",
    "wall_ns",
];

/// Twelve significant digits.
pub fn format_sci(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub run_id: usize,
    pub report: ApproxReport,
}

impl CsvRow {
    pub fn record(&self, timing: bool) -> [String; 13] {
        let r = &self.report;
        [
            self.run_id.to_string(),
            r.seed.to_string(),
            r.shape.f.to_string(),
            r.shape.h.to_string(),
            r.shape.w.to_string(),
            r.method.tag().to_string(),
            r.descriptor.clone(),
            format_sci(r.density),
            r.params.to_string(),
            r.iterations.to_string(),
            format_sci(r.mse),
            r.objective_final.map(format_sci).unwrap_or_default(),
            if timing { r.wall_ns.to_string() } else { "0".into() },
        ]
    }
}

/// One scheduled evaluation.
#[derive(Clone, Debug)]
pub struct Job {
    pub seed: u64,
    pub method: Method,
    pub target_density: Option<f64>,
    pub budget: Budget,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BucketSummary {
    pub target_density: f64,
    /// `method` or `method@T<iterations>` for solver rows.
    pub best: String,
    pub best_mean_mse: f64,
    pub mean_mse: BTreeMap<String, f64>,
    pub run_ids: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Skipped {
    pub seed: u64,
    pub method: String,
    pub target_density: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub buckets: Vec<BucketSummary>,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<CsvRow>,
    pub summary: SweepSummary,
    pub timing: bool,
}

impl SweepOutput {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows, self.timing)
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[CsvRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record(timing))?;
    }
    w.flush()?;
    Ok(())
}

fn label(method: Method, iterations: usize) -> String {
    if method.is_solver() {
        format!("{}@T{iterations}", method.tag())
    } else {
        method.tag().to_string()
    }
}

/// The problem a sweep evaluates for one seed.
pub fn build_problem(cfg: &SweepConfig, seed: u64) -> Result<AttentionProblem> {
    match &cfg.source {
        ProblemSource::Tensors(path) => load_tensors(path),
        ProblemSource::Synthetic => {
            let n = cfg.shape.n();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut semantic = SemanticPattern::random(n, cfg.semantic_count, &mut rng)?;
            semantic.scale = cfg.semantic_scale;
            let spec = SyntheticModelSpec {
                shape: cfg.shape,
                kernels: cfg.kernels,
                semantic,
                noise: cfg.noise,
                normalize: cfg.normalize,
                seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            };
            synthetic_problem(&spec, cfg.d_v, seed.wrapping_add(0x5EED))
        }
    }
}

/// Runs one job against a problem with dense attention `a` (row-major).
pub fn evaluate(
    problem: &AttentionProblem,
    a: &DenseMatrix,
    job: &Job,
    solver: &SolverConfig,
) -> Result<ApproxReport> {
    let n = problem.n();
    let start = Instant::now();
    let mut objective_final = None;
    let mut iterations = 0;
    let mse = match (&job.budget, job.method) {
        (Budget::TopK { k }, Method::TopK) => frobenius_mse(&topk_oracle(a, *k)?, a)?,
        (Budget::LowRank { rank }, Method::LowRank) => frobenius_mse(&lowrank_oracle(a, *rank)?, a)?,
        (Budget::Monarch(c), Method::MonarchProject) => {
            let am = c.layout().matrix_to_monarch(a);
            frobenius_mse(&project(&am, c.sizes())?.densify(), &am)?
        }
        (Budget::Tiled(p), Method::TiledProject) => {
            let am = p.layout().matrix_to_monarch(a);
            frobenius_mse(&project_tiled(&am, p.dims())?.densify(), &am)?
        }
        (Budget::Monarch(c), Method::MonarchSolve) => {
            let s = SolverConfig {
                iterations: job.iterations,
                trace_objective: true,
                ..solver.clone()
            };
            let (f, trace) = solve(problem, c, &s)?;
            iterations = job.iterations;
            objective_final = trace.final_objective();
            frobenius_mse(&f.densify(), &c.layout().matrix_to_monarch(a))?
        }
        (Budget::Tiled(p), Method::TiledSolve) => {
            let s = SolverConfig {
                iterations: job.iterations,
                trace_objective: true,
                ..solver.clone()
            };
            let (f, trace) = solve_tiled(problem, p, &s)?;
            iterations = job.iterations;
            objective_final = trace.final_objective();
            frobenius_mse(&f.densify(), &p.layout().matrix_to_monarch(a))?
        }
        (b, m) => {
            return Err(Error::Invalid(format!("budget {b:?} does not fit method {m}")));
        }
    };
    Ok(ApproxReport {
        method: job.method,
        shape: problem.shape(),
        seed: job.seed,
        descriptor: job.budget.descriptor(),
        params: job.budget.params(n),
        density: job.budget.density(n),
        iterations,
        mse,
        objective_final,
        wall_ns: start.elapsed().as_nanos(),
    })
}

fn solver_config(cfg: &SweepConfig) -> SolverConfig {
    SolverConfig {
        eps_div: cfg.eps_div,
        eps_log: cfg.eps_log,
        ..SolverConfig::default()
    }
}

/// Evaluates jobs in parallel; rows come back in job order.
fn run_jobs(cfg: &SweepConfig, jobs: &[Job]) -> Result<Vec<CsvRow>> {
    let solver = solver_config(cfg);
    solver.validate()?;
    let mut seeds: Vec<u64> = jobs.iter().map(|j| j.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let problems: BTreeMap<u64, (AttentionProblem, DenseMatrix)> = seeds
        .par_iter()
        .map(|&s| {
            let p = build_problem(cfg, s)?;
            let a = p.attention_matrix();
            Ok((s, (p, a)))
        })
        .collect::<Result<_>>()?;
    let reports: Vec<ApproxReport> = jobs
        .par_iter()
        .map(|job| {
            let (p, a) = &problems[&job.seed];
            evaluate(p, a, job, &solver)
        })
        .collect::<Result<_>>()?;
    Ok(reports
        .into_iter()
        .enumerate()
        .map(|(run_id, report)| CsvRow { run_id, report })
        .collect())
}

fn problem_shape(cfg: &SweepConfig) -> Result<VideoShape> {
    match &cfg.source {
        ProblemSource::Synthetic => Ok(cfg.shape),
        ProblemSource::Tensors(p) => Ok(load_tensors(p)?.shape()),
    }
}

/// One row per (seed, method, density[, iterations]) in config order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let shape = problem_shape(cfg)?;
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for &seed in &cfg.seeds {
        for &method in &cfg.methods {
            for &density in &cfg.densities {
                let budget = match budget_match(shape, method, density) {
                    Ok(b) => b,
                    Err(e @ Error::InfeasibleBudget { .. }) => match cfg.on_infeasible {
                        OnInfeasible::Error => return Err(e),
                        OnInfeasible::Skip => {
                            skipped.push(Skipped {
                                seed,
                                method: method.tag().into(),
                                target_density: density,
                                reason: e.to_string(),
                            });
                            continue;
                        }
                    },
                    Err(e) => return Err(e),
                };
                let iters: &[usize] = if method.is_solver() { &cfg.iterations } else { &[0] };
                for &iterations in iters {
                    jobs.push(Job {
                        seed,
                        method,
                        target_density: Some(density),
                        budget: budget.clone(),
                        iterations,
                    });
                }
            }
        }
    }
    let rows = run_jobs(cfg, &jobs)?;
    let buckets = summarize(&jobs, &rows);
    Ok(SweepOutput {
        summary: SweepSummary {
            rows: rows.len(),
            buckets,
            skipped,
        },
        rows,
        timing: cfg.timing,
    })
}

/// Per target density, the method label with the lowest mean MSE over
/// seeds (first in config order on ties).
pub fn summarize(jobs: &[Job], rows: &[CsvRow]) -> Vec<BucketSummary> {
    let mut order: Vec<f64> = Vec::new();
    for j in jobs {
        if let Some(d) = j.target_density {
            if !order.contains(&d) {
                order.push(d);
            }
        }
    }
    order
        .into_iter()
        .map(|target| {
            let mut labels: Vec<String> = Vec::new();
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let mut run_ids = Vec::new();
            for (job, row) in jobs.iter().zip(rows) {
                if job.target_density != Some(target) {
                    continue;
                }
                let l = label(job.method, job.iterations);
                if !labels.contains(&l) {
                    labels.push(l.clone());
                }
                let e = sums.entry(l).or_insert((0.0, 0));
                e.0 += row.report.mse;
                e.1 += 1;
                run_ids.push(row.run_id);
            }
            let mean_mse: BTreeMap<String, f64> =
                sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
            let best = labels
                .iter()
                .fold(None::<&String>, |best, l| match best {
                    Some(b) if mean_mse[b] <= mean_mse[l] => Some(b),
                    _ => Some(l),
                })
                .cloned()
                .unwrap_or_default();
            BucketSummary {
                target_density: target,
                best_mean_mse: mean_mse.get(&best).copied().unwrap_or(f64::NAN),
                best,
                mean_mse,
                run_ids,
            }
        })
        .collect()
}

/// Solver quality versus iteration count at one fixed configuration.
pub fn run_iteration_ablation(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let shape = problem_shape(cfg)?;
    let config = BlockConfig::parse(shape, &cfg.iters_config)?;
    let (method, budget) = match cfg.iters_neighborhoods {
        Some(nb) => (Method::TiledSolve, Budget::Tiled(make_tile_plan(shape, &config, nb)?)),
        None => (Method::MonarchSolve, Budget::Monarch(config)),
    };
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for &iterations in &cfg.iterations {
            jobs.push(Job {
                seed,
                method,
                target_density: None,
                budget: budget.clone(),
                iterations,
            });
        }
    }
    let rows = run_jobs(cfg, &jobs)?;
    Ok(SweepOutput {
        summary: SweepSummary {
            rows: rows.len(),
            buckets: Vec::new(),
            skipped: Vec::new(),
        },
        rows,
        timing: cfg.timing,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRow {
    pub config: BlockConfig,
    pub aligned: bool,
    pub mse: f64,
    pub max_block_ratio: f64,
}

/// Configurations compared by the alignment ablation: the aligned ones (or
/// the dense `(N, 1)` one when none exist) followed by every flat
/// misaligned `b1 × b2 = N` split with `b1, b2 > 1`.
pub fn alignment_configs(shape: VideoShape) -> Vec<BlockConfig> {
    let mut configs = enumerate_aligned_configs(shape);
    if configs.is_empty() {
        configs.push(BlockConfig::dense(shape));
    }
    let n = shape.n();
    for b1 in 2..n {
        if !n.is_multiple_of(b1) {
            continue;
        }
        let c = BlockConfig::flat(shape, b1, n / b1).expect("divisor split");
        if !c.is_aligned() {
            configs.push(c);
        }
    }
    configs
}

/// Projection error of the pure positional map under each configuration.
pub fn run_alignment_ablation(shape: VideoShape, kernels: &Kernels) -> Result<Vec<AlignmentRow>> {
    let d = positional_matrix(shape, kernels);
    alignment_configs(shape)
        .into_par_iter()
        .map(|config| {
            let dm = config.layout().matrix_to_monarch(&d);
            let f = project(&dm, config.sizes())?;
            let mse = frobenius_mse(&f.densify(), &dm)?;
            let report = crate::synth::verify_blockwise_rank1(&d, &config, 0.0)?;
            Ok(AlignmentRow {
                aligned: config.is_aligned(),
                config,
                mse,
                max_block_ratio: report.max_ratio,
            })
        })
        .collect()
}

pub fn write_alignment_csv<W: Write>(out: W, shape: VideoShape, rows: &[AlignmentRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "f", "h", "w", "config_descriptor", "b1", "b2", "aligned", "mse", "max_block_ratio"])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            i.to_string(),
            shape.f.to_string(),
            shape.h.to_string(),
            shape.w.to_string(),
            r.config.descriptor(),
            r.config.b1().to_string(),
            r.config.b2().to_string(),
            r.aligned.to_string(),
            format_sci(r.mse),
            format_sci(r.max_block_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
