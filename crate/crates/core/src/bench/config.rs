//! Flat `key = value` run configuration with dotted section keys.
//!
//! ```text
//! # synthetic sweep
//! problem.shape = 4,6,8
//! synth.semantic = 5
//! sweep.methods = topk, monarch-project, tiled-solve
//! sweep.densities = 0.1, 0.25
//! sweep.iterations = 1, 10
//! sweep.seeds = 0, 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::Method;
use crate::error::{Error, Result};
use crate::layout::VideoShape;
use crate::synth::{DistanceKernel, Kernels, Normalize};

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Synthetic,
    Tensors(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnInfeasible {
    Error,
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub source: ProblemSource,
    pub shape: VideoShape,
    /// Width of the random `V` for synthetic problems.
    pub d_v: usize,
    pub kernels: Kernels,
    pub semantic_count: usize,
    pub semantic_scale: f64,
    pub noise: f64,
    pub normalize: Normalize,
    pub methods: Vec<Method>,
    pub densities: Vec<f64>,
    pub iterations: Vec<usize>,
    pub seeds: Vec<u64>,
    pub on_infeasible: OnInfeasible,
    pub timing: bool,
    pub eps_div: f64,
    pub eps_log: f64,
    pub output: Option<PathBuf>,
    /// Block config of the iteration ablation, e.g. `fh|w`.
    pub iters_config: String,
    /// Neighborhoods for a tiled iteration ablation.
    pub iters_neighborhoods: Option<(usize, usize, usize)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            source: ProblemSource::Synthetic,
            shape: VideoShape { f: 4, h: 6, w: 8 },
            d_v: 8,
            kernels: Kernels::default(),
            semantic_count: 5,
            semantic_scale: 1.0,
            noise: 0.0,
            normalize: Normalize::RowNormalized,
            methods: vec![Method::TopK, Method::MonarchProject],
            densities: vec![0.25],
            iterations: vec![1],
            seeds: vec![0],
            on_infeasible: OnInfeasible::Error,
            timing: false,
            eps_div: 1e-30,
            eps_log: 1e-300,
            output: None,
            iters_config: "fh|w".into(),
            iters_neighborhoods: None,
        }
    }
}

fn list<T>(line: usize, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            f(s).ok_or_else(|| Error::Config {
                line,
                msg: format!("cannot parse list item {s:?}"),
            })
        })
        .collect()
}

fn triple(line: usize, value: &str) -> Result<(usize, usize, usize)> {
    match list(line, value, |s| s.parse::<usize>().ok())?[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config {
            line,
            msg: format!("expected three comma-separated counts, got {value:?}"),
        }),
    }
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad value {value:?} for {key}"),
    })
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("bad boolean {value:?} for {key}"),
        }),
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let ProblemSource::Tensors(p) = &cfg.source {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.source = ProblemSource::Tensors(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut kernel: Option<String> = None;
        let mut gammas: Option<Vec<f64>> = None;
        let mut kernel_line = 0;
        let mut source: Option<String> = None;
        let mut tensors: Option<PathBuf> = None;
        for (ix, raw) in text.lines().enumerate() {
            let line = ix + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "problem.source" => source = Some(value.to_string()),
                "problem.tensors" => tensors = Some(PathBuf::from(value)),
                "problem.shape" => {
                    let (f, h, w) = triple(line, value)?;
                    cfg.shape = VideoShape::new(f, h, w).map_err(|e| Error::Config {
                        line,
                        msg: e.to_string(),
                    })?;
                }
                "problem.d" => cfg.d_v = scalar(line, key, value)?,
                "synth.kernel" => {
                    kernel = Some(value.to_string());
                    kernel_line = line;
                }
                "synth.gamma" => {
                    gammas = Some(list(line, value, |s| s.parse().ok())?);
                    kernel_line = line;
                }
                "synth.semantic" => cfg.semantic_count = scalar(line, key, value)?,
                "synth.semantic_scale" => cfg.semantic_scale = scalar(line, key, value)?,
                "synth.noise" => cfg.noise = scalar(line, key, value)?,
                "synth.normalize" => {
                    cfg.normalize = match value {
                        "raw" => Normalize::Raw,
                        "row" | "rows" => Normalize::RowNormalized,
                        _ => {
                            return Err(Error::Config {
                                line,
                                msg: format!("synth.normalize must be raw or row, got {value:?}"),
                            })
                        }
                    }
                }
                "sweep.methods" => cfg.methods = list(line, value, |s| s.parse().ok())?,
                "sweep.densities" => cfg.densities = list(line, value, |s| s.parse().ok())?,
                "sweep.iterations" => cfg.iterations = list(line, value, |s| s.parse().ok())?,
                "sweep.seeds" => cfg.seeds = list(line, value, |s| s.parse().ok())?,
                "sweep.on_infeasible" => {
                    cfg.on_infeasible = match value {
                        "error" => OnInfeasible::Error,
                        "skip" => OnInfeasible::Skip,
                        _ => {
                            return Err(Error::Config {
                                line,
                                msg: format!("sweep.on_infeasible must be error or skip, got {value:?}"),
                            })
                        }
                    }
                }
                "sweep.timing" => cfg.timing = boolean(line, key, value)?,
                "solver.eps_div" => cfg.eps_div = scalar(line, key, value)?,
                "solver.eps_log" => cfg.eps_log = scalar(line, key, value)?,
                "output.path" => cfg.output = Some(PathBuf::from(value)),
                "iters.config" => cfg.iters_config = value.to_string(),
                "iters.neighborhoods" => cfg.iters_neighborhoods = Some(triple(line, value)?),
                _ => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        cfg.source = match (source.as_deref(), tensors) {
            (None | Some("synthetic"), None) => ProblemSource::Synthetic,
            (None | Some("tensors"), Some(p)) => ProblemSource::Tensors(p),
            (Some("tensors"), None) => {
                return Err(Error::Config {
                    line: 0,
                    msg: "problem.source = tensors needs problem.tensors".into(),
                })
            }
            (Some(other), _) => {
                return Err(Error::Config {
                    line: 0,
                    msg: format!("problem.source must be synthetic or tensors, got {other:?}"),
                })
            }
        };
        cfg.kernels = kernels(kernel.as_deref(), gammas, kernel_line)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config { line: 0, msg });
        if self.methods.is_empty() {
            return fail("sweep.methods is empty".into());
        }
        if let Some(d) = self.densities.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return fail(format!("density {d} outside (0, 1]"));
        }
        if self.densities.is_empty() {
            return fail("sweep.densities is empty".into());
        }
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return fail("sweep.iterations needs counts >= 1".into());
        }
        if self.seeds.is_empty() {
            return fail("sweep.seeds is empty".into());
        }
        if self.d_v == 0 {
            return fail("problem.d must be positive".into());
        }
        for k in [self.kernels.t, self.kernels.h, self.kernels.w] {
            if let Err(e) = k.validate() {
                return fail(e.to_string());
            }
        }
        Ok(())
    }
}

fn kernels(kind: Option<&str>, gammas: Option<Vec<f64>>, line: usize) -> Result<Kernels> {
    let bad = |msg: String| Error::Config { line, msg };
    match kind.unwrap_or("exponential") {
        "exponential" => {
            let mut k = Kernels::default();
            match gammas.as_deref() {
                None => {}
                Some(&[g]) => k = Kernels::uniform(DistanceKernel::Exponential(g)),
                Some(&[t, h, w]) => {
                    k = Kernels {
                        t: DistanceKernel::Exponential(t),
                        h: DistanceKernel::Exponential(h),
                        w: DistanceKernel::Exponential(w),
                    }
                }
                Some(other) => return Err(bad(format!("synth.gamma takes 1 or 3 values, got {}", other.len()))),
            }
            Ok(k)
        }
        "rational" => Ok(Kernels::uniform(DistanceKernel::Rational)),
        "constant" => Ok(Kernels::uniform(DistanceKernel::Constant)),
        other => Err(bad(format!("unknown kernel {other:?}"))),
    }
}
