//! Dense attention, the oracle sparse and low-rank approximators, top-p
//! coverage, and budget matching across methods.

use std::fmt;
use std::str::FromStr;

use crate::error::{out_of_range, Error, Result};
use crate::layout::{
    enumerate_aligned_configs, make_tile_plan, neighborhood_candidates, BlockConfig, TilePlan,
    VideoShape,
};
use crate::monarch::{param_count, param_count_tiled};
use crate::solver::AttentionProblem;
use crate::svd::truncated_svd;
use crate::tensor::DenseMatrix;

/// Returns `(A, A·V)` with `A = softmax(scale · Q Kᵀ)`.
pub fn dense_attention(problem: &AttentionProblem) -> (DenseMatrix, DenseMatrix) {
    let a = problem.attention_matrix();
    let out = a.matmul(problem.v()).expect("V has N rows");
    (a, out)
}

fn topk_mask(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keeps the `k` largest entries of every row (lowest index wins ties)
/// and zeroes the rest.
pub fn topk_oracle(a: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if k == 0 || k > a.cols() {
        return Err(out_of_range("k", k, format!("1..={}", a.cols())));
    }
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for c in topk_mask(a.row(r), k) {
            out[(r, c)] = a[(r, c)];
        }
    }
    Ok(out)
}

/// [`topk_oracle`] with every row rescaled to its original sum.
pub fn topk_oracle_renormalized(a: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    let mut out = topk_oracle(a, k)?;
    for r in 0..out.rows() {
        let total: f64 = a.row(r).iter().sum();
        let kept: f64 = out.row(r).iter().sum();
        if kept != 0.0 {
            out.row_mut(r).iter_mut().for_each(|x| *x *= total / kept);
        }
    }
    Ok(out)
}

/// Best rank-`rank` approximation via truncated SVD.
pub fn lowrank_oracle(a: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    Ok(truncated_svd(a, rank)?.reconstruct())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coverage {
    /// Per row, the fewest largest entries whose mass reaches `p`.
    pub counts: Vec<usize>,
    /// Mean count divided by the row length.
    pub fraction: f64,
}

pub fn top_p_coverage(a: &DenseMatrix, p: f64) -> Result<Coverage> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(out_of_range("p", p, "(0, 1]"));
    }
    let n = a.cols();
    let mut counts = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = a.row(r);
        if row.iter().any(|&x| x < 0.0) {
            return Err(Error::Invalid(format!("row {r} has negative entries")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("row {r} sums to {total}, not 1")));
        }
        let mut sorted = row.to_vec();
        sorted.sort_by(|x, y| y.total_cmp(x));
        let goal = p * total * (1.0 - 1e-14);
        let mut cum = 0.0;
        let mut count = n;
        for (i, x) in sorted.iter().enumerate() {
            cum += x;
            if cum >= goal {
                count = i + 1;
                break;
            }
        }
        counts.push(count);
    }
    let fraction = if counts.is_empty() || n == 0 {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64 / n as f64
    };
    Ok(Coverage { counts, fraction })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    TopK,
    LowRank,
    MonarchProject,
    TiledProject,
    MonarchSolve,
    TiledSolve,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::TopK,
        Method::LowRank,
        Method::MonarchProject,
        Method::TiledProject,
        Method::MonarchSolve,
        Method::TiledSolve,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::TopK => "topk",
            Method::LowRank => "lowrank",
            Method::MonarchProject => "monarch-project",
            Method::TiledProject => "tiled-project",
            Method::MonarchSolve => "monarch-solve",
            Method::TiledSolve => "tiled-solve",
        }
    }

    pub fn is_solver(self) -> bool {
        matches!(self, Method::MonarchSolve | Method::TiledSolve)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.trim())
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}")))
    }
}

/// The concrete budget chosen for a method at a target density.
#[derive(Clone, Debug, PartialEq)]
pub enum Budget {
    TopK { k: usize },
    LowRank { rank: usize },
    Monarch(BlockConfig),
    Tiled(TilePlan),
}

impl Budget {
    pub fn params(&self, n: usize) -> usize {
        match self {
            Budget::TopK { k } => k * n,
            Budget::LowRank { rank } => 2 * n * rank,
            Budget::Monarch(c) => param_count(c.sizes()).total,
            Budget::Tiled(p) => param_count_tiled(p.dims()).total,
        }
    }

    pub fn density(&self, n: usize) -> f64 {
        self.params(n) as f64 / (n as f64 * n as f64)
    }

    pub fn descriptor(&self) -> String {
        match self {
            Budget::TopK { k } => format!("k={k}"),
            Budget::LowRank { rank } => format!("rank={rank}"),
            Budget::Monarch(c) => c.to_string(),
            Budget::Tiled(p) => p.descriptor(),
        }
    }
}

const DENSITY_SLACK: f64 = 1e-12;

fn floor_budget(target: f64, n: usize) -> usize {
    (target * n as f64 + 1e-9).floor() as usize
}

fn nearest(mut densities: Vec<f64>, target: f64) -> Vec<f64> {
    densities.sort_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()));
    densities.dedup();
    densities.truncate(3);
    densities
}

/// Largest-density budget of `method` not exceeding `target`.
pub fn budget_match(shape: VideoShape, method: Method, target: f64) -> Result<Budget> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(out_of_range("target density", target, "(0, 1]"));
    }
    let n = shape.n();
    let infeasible = |nearest: Vec<f64>| Error::InfeasibleBudget {
        method: method.tag().to_string(),
        target,
        nearest,
    };
    match method {
        Method::TopK => match floor_budget(target, n).min(n) {
            0 => Err(infeasible(vec![1.0 / n as f64])),
            k => Ok(Budget::TopK { k }),
        },
        Method::LowRank => match (floor_budget(target, n) / 2).min(n) {
            0 => Err(infeasible(vec![2.0 / n as f64])),
            rank => Ok(Budget::LowRank { rank }),
        },
        Method::MonarchProject | Method::MonarchSolve => {
            let mut best: Option<(f64, BlockConfig)> = None;
            let mut all = Vec::new();
            for c in enumerate_aligned_configs(shape) {
                let d = param_count(c.sizes()).density;
                all.push(d);
                if d <= target + DENSITY_SLACK && best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                    best = Some((d, c));
                }
            }
            best.map(|(_, c)| Budget::Monarch(c))
                .ok_or_else(|| infeasible(nearest(all, target)))
        }
        Method::TiledProject | Method::TiledSolve => {
            let base = BlockConfig::fh_w(shape);
            let mut best: Option<(f64, usize, TilePlan)> = None;
            let mut all = Vec::new();
            for nb in neighborhood_candidates(shape) {
                let plan = make_tile_plan(shape, &base, nb)?;
                let d = param_count_tiled(plan.dims()).density;
                all.push(d);
                if d > target + DENSITY_SLACK {
                    continue;
                }
                let tiles = plan.c1() * plan.c2();
                let better = match &best {
                    None => true,
                    Some((bd, bt, _)) => d > *bd || (d == *bd && tiles < *bt),
                };
                if better {
                    best = Some((d, tiles, plan));
                }
            }
            best.map(|(_, _, p)| Budget::Tiled(p))
                .ok_or_else(|| infeasible(nearest(all, target)))
        }
    }
}

/// Outcome of approximating one attention matrix with one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxReport {
    pub method: Method,
    pub shape: VideoShape,
    pub seed: u64,
    pub descriptor: String,
    pub params: usize,
    pub density: f64,
    pub iterations: usize,
    pub mse: f64,
    pub objective_final: Option<f64>,
    pub wall_ns: u128,
}
