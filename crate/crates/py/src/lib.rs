//! Python bindings. Matrices cross the boundary as lists of row lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use tiled_monarch as tm;
use tm::{
    AnyFactors, BlockConfig, DenseMatrix, LayoutPlan, StructuredAttention, TileDims, VideoShape,
};

type Rows = Vec<Vec<f64>>;

fn err(e: tm::Error) -> PyErr {
    match e {
        tm::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Rows) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(err)
}

fn shape((f, h, w): (usize, usize, usize)) -> PyResult<VideoShape> {
    VideoShape::new(f, h, w).map_err(err)
}

/// A block configuration over a token grid, e.g. `Config((2, 3, 3), "fh|w")`.
#[pyclass(name = "Config", frozen)]
struct PyConfig(BlockConfig);

#[pymethods]
impl PyConfig {
    #[new]
    fn new(grid: (usize, usize, usize), descriptor: &str) -> PyResult<Self> {
        Ok(Self(BlockConfig::parse(shape(grid)?, descriptor).map_err(err)?))
    }

    #[getter]
    fn b1(&self) -> usize {
        self.0.b1()
    }

    #[getter]
    fn b2(&self) -> usize {
        self.0.b2()
    }

    #[getter]
    fn descriptor(&self) -> String {
        self.0.descriptor()
    }

    #[getter]
    fn aligned(&self) -> bool {
        self.0.is_aligned()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.0)
    }
}

/// Tiling of the `fh|w` base config by `(n_f, n_h, n_w)` neighborhoods.
#[pyclass(name = "TilePlan", frozen)]
struct PyTilePlan(tm::TilePlan);

#[pymethods]
impl PyTilePlan {
    #[new]
    fn new(grid: (usize, usize, usize), neighborhoods: (usize, usize, usize)) -> PyResult<Self> {
        let s = shape(grid)?;
        Ok(Self(tm::make_tile_plan(s, &BlockConfig::fh_w(s), neighborhoods).map_err(err)?))
    }

    #[getter]
    fn c1(&self) -> usize {
        self.0.c1()
    }

    #[getter]
    fn c2(&self) -> usize {
        self.0.c2()
    }

    #[getter]
    fn density(&self) -> f64 {
        tm::param_count_tiled(self.0.dims()).density
    }

    fn __repr__(&self) -> String {
        format!("TilePlan({})", self.0.descriptor())
    }
}

/// Query, key and value matrices on a token grid.
#[pyclass(name = "Problem", frozen)]
struct PyProblem(tm::AttentionProblem);

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (grid, q, k, v, scale=None))]
    fn new(grid: (usize, usize, usize), q: Rows, k: Rows, v: Rows, scale: Option<f64>) -> PyResult<Self> {
        let mut p = tm::AttentionProblem::new(shape(grid)?, matrix(q)?, matrix(k)?, matrix(v)?).map_err(err)?;
        if let Some(s) = scale {
            p = p.with_scale(s).map_err(err)?;
        }
        Ok(Self(p))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(tm::bench::load_tensors(path.as_ref()).map_err(err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        tm::bench::save_tensors(path.as_ref(), &self.0).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale()
    }

    fn attention(&self) -> Rows {
        self.0.attention_matrix().to_rows()
    }
}

/// Fitted factors. `densify` and `apply` work in the factors' block order;
/// `dense` and `output` in row-major token order when the fit came from a
/// problem.
#[pyclass(name = "Factors", frozen)]
struct PyFactors {
    factors: AnyFactors,
    layout: Option<LayoutPlan>,
}

impl PyFactors {
    fn structured(&self) -> &dyn StructuredAttention {
        match &self.factors {
            AnyFactors::Untiled(f) => f,
            AnyFactors::Tiled(f) => f,
        }
    }

    fn layout(&self) -> PyResult<&LayoutPlan> {
        self.layout
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("factors carry no token layout"))
    }
}

#[pymethods]
impl PyFactors {
    #[getter]
    fn tiled(&self) -> bool {
        matches!(self.factors, AnyFactors::Tiled(_))
    }

    fn densify(&self) -> Rows {
        self.structured().densify().to_rows()
    }

    fn apply(&self, v: Rows) -> PyResult<Rows> {
        Ok(self.structured().apply(&matrix(v)?).map_err(err)?.to_rows())
    }

    fn dense(&self) -> PyResult<Rows> {
        Ok(tm::solver::densify_in_token_order(self.structured(), self.layout()?).to_rows())
    }

    fn output(&self, v: Rows) -> PyResult<Rows> {
        let out = tm::attention_output(self.structured(), self.layout()?, &matrix(v)?).map_err(err)?;
        Ok(out.to_rows())
    }

    fn param_count<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let pc = self.structured().param_count();
        let d = PyDict::new(py);
        d.set_item("l", pc.l)?;
        d.set_item("r", pc.r)?;
        d.set_item("total", pc.total)?;
        d.set_item("density", pc.density)?;
        Ok(d)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &tm::encode_factors(&self.factors))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            factors: tm::decode_factors(data).map_err(err)?,
            layout: None,
        })
    }

    fn text_dump(&self) -> String {
        tm::text_dump(&self.factors)
    }
}

/// Runs the alternating solver under a `Config` or a `TilePlan`; returns the
/// factors and the objective after each iteration.
#[pyfunction]
#[pyo3(signature = (problem, plan, iterations=1))]
fn solve(problem: &PyProblem, plan: &Bound<'_, PyAny>, iterations: usize) -> PyResult<(PyFactors, Vec<f64>)> {
    let cfg = tm::SolverConfig {
        iterations,
        trace_objective: true,
        ..tm::SolverConfig::default()
    };
    if let Ok(c) = plan.extract::<PyRef<'_, PyConfig>>() {
        let (f, trace) = tm::solve(&problem.0, &c.0, &cfg).map_err(err)?;
        return Ok((
            PyFactors {
                factors: AnyFactors::Untiled(f),
                layout: Some(c.0.layout()),
            },
            trace.objective,
        ));
    }
    let p = plan.extract::<PyRef<'_, PyTilePlan>>()?;
    let (f, trace) = tm::solve_tiled(&problem.0, &p.0, &cfg).map_err(err)?;
    Ok((
        PyFactors {
            factors: AnyFactors::Tiled(f),
            layout: Some(p.0.layout()),
        },
        trace.objective,
    ))
}

/// Best (tiled) Monarch approximation of a matrix already in block order.
#[pyfunction]
#[pyo3(signature = (target, b1, b2, c1=1, c2=1))]
fn project(target: Rows, b1: usize, b2: usize, c1: usize, c2: usize) -> PyResult<PyFactors> {
    let m = matrix(target)?;
    let dims = TileDims::new(b1, b2, c1, c2).map_err(err)?;
    let factors = if c1 == 1 && c2 == 1 {
        AnyFactors::Untiled(tm::project(&m, dims.sizes()).map_err(err)?)
    } else {
        AnyFactors::Tiled(tm::project_tiled(&m, dims).map_err(err)?)
    };
    Ok(PyFactors { factors, layout: None })
}

#[pyfunction]
fn aligned_configs(grid: (usize, usize, usize)) -> PyResult<Vec<PyConfig>> {
    Ok(tm::enumerate_aligned_configs(shape(grid)?).into_iter().map(PyConfig).collect())
}

#[pyfunction]
fn topk_oracle(a: Rows, k: usize) -> PyResult<Rows> {
    Ok(tm::topk_oracle(&matrix(a)?, k).map_err(err)?.to_rows())
}

#[pyfunction]
fn lowrank_oracle(a: Rows, rank: usize) -> PyResult<Rows> {
    Ok(tm::lowrank_oracle(&matrix(a)?, rank).map_err(err)?.to_rows())
}

/// Per-row token counts reaching mass `p`, and their mean fraction of `N`.
#[pyfunction]
fn top_p_coverage(a: Rows, p: f64) -> PyResult<(Vec<usize>, f64)> {
    let c = tm::top_p_coverage(&matrix(a)?, p).map_err(err)?;
    Ok((c.counts, c.fraction))
}

/// Separable positional map with exponential kernels `gamma^|Δ|` per axis.
#[pyfunction]
#[pyo3(signature = (grid, gamma=(0.7, 0.85, 0.85)))]
fn positional_matrix(grid: (usize, usize, usize), gamma: (f64, f64, f64)) -> PyResult<Rows> {
    let k = tm::Kernels {
        t: tm::DistanceKernel::Exponential(gamma.0),
        h: tm::DistanceKernel::Exponential(gamma.1),
        w: tm::DistanceKernel::Exponential(gamma.2),
    };
    for axis in [k.t, k.h, k.w] {
        axis.validate().map_err(err)?;
    }
    Ok(tm::positional_matrix(shape(grid)?, &k).to_rows())
}

/// `(passed, max sigma2/sigma1)` over the blocks of `m` under `config`.
#[pyfunction]
#[pyo3(signature = (m, config, tol=1e-12))]
fn verify_blockwise_rank1(m: Rows, config: &PyConfig, tol: f64) -> PyResult<(bool, f64)> {
    let r = tm::verify_blockwise_rank1(&matrix(m)?, &config.0, tol).map_err(err)?;
    Ok((r.passed, r.max_ratio))
}

/// `(descriptor, params, density)` of the budget a method gets at a target density.
#[pyfunction]
fn budget_match(grid: (usize, usize, usize), method: &str, density: f64) -> PyResult<(String, usize, f64)> {
    let s = shape(grid)?;
    let m: tm::Method = method.parse().map_err(err)?;
    let b = tm::budget_match(s, m, density).map_err(err)?;
    Ok((b.descriptor(), b.params(s.n()), b.density(s.n())))
}

/// Runs one property suite; returns `(passed, detail)`.
#[pyfunction]
fn run_suite(id: u8) -> (bool, String) {
    let r = tm::verify::run_suite(id);
    (r.passed, r.detail)
}

#[pymodule]
fn tiled_monarch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTilePlan>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyFactors>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(aligned_configs, m)?)?;
    m.add_function(wrap_pyfunction!(topk_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(lowrank_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(top_p_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(positional_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(verify_blockwise_rank1, m)?)?;
    m.add_function(wrap_pyfunction!(budget_match, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
