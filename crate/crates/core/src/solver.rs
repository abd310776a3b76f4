//! Alternating-refinement solver that estimates Monarch factors of
//! `softmax(Q Kᵀ)` straight from `Q` and `K`.
//!
//! The untiled solver is the tiled one with `c1 = c2 = 1`: each iteration
//! refreshes `R` from the current `L`, then `L` from the new `R`, and the
//! final factors are the pair after the last `L` update.

use rayon::prelude::*;

use crate::contract::{contract, ContractPattern};
use crate::error::{Error, Result};
use crate::layout::{BlockConfig, LayoutPlan, TilePlan, VideoShape};
use crate::monarch::{MonarchFactors, StructuredAttention, TileDims, TiledMonarchFactors};
use crate::tensor::{frobenius_mse, softmax_in_place, softmax_rows, DenseMatrix, Tensor};

/// Queries, keys and values of one attention head, rows in row-major
/// token order.
#[derive(Clone, Debug)]
pub struct AttentionProblem {
    shape: VideoShape,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    scale: f64,
}

impl AttentionProblem {
    /// Logit scale defaults to `1/√d`.
    pub fn new(shape: VideoShape, q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let n = shape.n();
        let d = q.cols();
        if q.rows() != n || k.rows() != n || v.rows() != n {
            return Err(Error::Shape(format!(
                "Q, K, V must have N = {n} rows, got {}, {}, {}",
                q.rows(),
                k.rows(),
                v.rows()
            )));
        }
        if k.cols() != d || d == 0 {
            return Err(Error::Shape(format!("Q and K widths {} and {} differ or are zero", d, k.cols())));
        }
        for (name, m) in [("Q", &q), ("K", &k), ("V", &v)] {
            if !m.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self {
            shape,
            q,
            k,
            v,
            scale: 1.0 / (d as f64).sqrt(),
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::NonFinite("logit scale".into()));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn shape(&self) -> VideoShape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn k(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `scale · Q Kᵀ`
    pub fn logits(&self) -> DenseMatrix {
        self.q
            .matmul_transposed(&self.k)
            .expect("widths checked")
            .scaled(self.scale)
    }

    /// The exact attention matrix `softmax(scale · Q Kᵀ)`.
    pub fn attention_matrix(&self) -> DenseMatrix {
        softmax_rows(&self.logits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub eps_div: f64,
    pub eps_log: f64,
    pub trace_objective: bool,
    pub trace_mse: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 1,
            eps_div: 1e-30,
            eps_log: 1e-300,
            trace_objective: false,
            trace_mse: false,
        }
    }
}

impl SolverConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("solver needs at least one iteration".into()));
        }
        for (name, eps) in [("eps_div", self.eps_div), ("eps_log", self.eps_log)] {
            if !(eps > 0.0 && eps <= 1e-6) {
                return Err(Error::Invalid(format!("{name} = {eps} outside (0, 1e-6]")));
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics; each vector is empty unless requested.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub objective: Vec<f64>,
    pub mse: Vec<f64>,
}

impl SolverTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective.last().copied()
    }
}

/// `⟨M, S⟩ + H(M)` with `H(M) = -Σ M log M` and `0 log 0 = 0`. Both
/// matrices must share the same token order.
pub fn objective_dense(m: &DenseMatrix, logits: &DenseMatrix) -> Result<f64> {
    if m.shape() != logits.shape() {
        return Err(Error::Shape("objective operands differ in shape".into()));
    }
    let mut inner = 0.0;
    let mut entropy = 0.0;
    for (&a, &s) in m.data().iter().zip(logits.data()) {
        if a < 0.0 {
            return Err(Error::Invalid(format!("objective needs non-negative entries, found {a}")));
        }
        if a > 0.0 {
            inner += a * s;
            entropy -= a * a.ln();
        }
    }
    Ok(inner + entropy)
}

/// Objective of structured factors against `q_scaled · kᵀ`, where `q` and
/// `k` are already in the factors' token order.
pub fn objective(
    factors: &dyn StructuredAttention,
    q_scaled: &DenseMatrix,
    k: &DenseMatrix,
) -> Result<f64> {
    objective_dense(&factors.densify(), &q_scaled.matmul_transposed(k)?)
}

/// Untiled solve on the ordering induced by `config`.
pub fn solve(
    problem: &AttentionProblem,
    config: &BlockConfig,
    solver: &SolverConfig,
) -> Result<(MonarchFactors, SolverTrace)> {
    let plan = TilePlan::untiled(config.clone());
    let (factors, trace) = solve_tiled(problem, &plan, solver)?;
    Ok((factors.to_untiled()?, trace))
}

/// Scratch tensors of one tile for one iteration.
struct TileWorkspace {
    alpha_r: Tensor,
    c_r: Tensor,
    beta_r: Tensor,
    alpha_l: Tensor,
    c_l: Tensor,
    beta_l: Tensor,
}

pub fn solve_tiled(
    problem: &AttentionProblem,
    plan: &TilePlan,
    solver: &SolverConfig,
) -> Result<(TiledMonarchFactors, SolverTrace)> {
    solver.validate()?;
    if plan.config().shape() != problem.shape() {
        return Err(Error::Shape(format!(
            "plan over {} used with a problem over {}",
            plan.config().shape(),
            problem.shape()
        )));
    }
    let dims = plan.dims();
    let layout = plan.layout();
    let q = layout.rows_to_monarch(problem.q()).scaled(problem.scale());
    let k = layout.rows_to_monarch(problem.k());
    let q_tiles = gather_tiles(&q, dims);
    let k_tiles = gather_tiles(&k, dims);

    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let (llen, rlen) = dims.tile_lens();
    let n_tiles = dims.tiles();
    let eye = Tensor::from_fn(&[t2, t1, t1], |ix| (ix[1] == ix[2]) as u8 as f64);
    let mut l_tiles: Vec<Tensor> = vec![eye; n_tiles];
    let mut r_tiles: Vec<Tensor> = vec![Tensor::zeros(&[t1, t2, t2]); n_tiles];

    let dense_a = solver
        .trace_mse
        .then(|| layout.matrix_to_monarch(&problem.attention_matrix()));
    let logits = solver
        .trace_objective
        .then(|| q.matmul_transposed(&k).expect("widths checked"));
    let mut trace = SolverTrace::default();

    for _ in 0..solver.iterations {
        let updated: Vec<(Tensor, Tensor)> = (0..n_tiles)
            .into_par_iter()
            .map(|t| {
                let (l1, j1, k1, i1) = dims.tile_coords(t);
                let qt = &q_tiles[l1 * dims.c2 + j1];
                let kt = &k_tiles[k1 * dims.c2 + i1];
                let ws = tile_step(&l_tiles[t], qt, kt, solver)?;
                Ok((ws.0, ws.1))
            })
            .collect::<Result<_>>()?;
        let mut z_l = Vec::with_capacity(n_tiles);
        for (t, (r, z)) in updated.into_iter().enumerate() {
            r_tiles[t] = r;
            z_l.push(z);
        }
        normalize_l(&z_l, &mut l_tiles, dims);
        if l_tiles.iter().any(|l| l.data().iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("L update produced non-finite weights".into()));
        }
        if dense_a.is_some() || logits.is_some() {
            let current = assemble(dims, &l_tiles, &r_tiles, llen, rlen)?;
            let m = current.densify();
            if let Some(s) = &logits {
                trace.objective.push(objective_dense(&m, s)?);
            }
            if let Some(a) = &dense_a {
                trace.mse.push(frobenius_mse(&m, a)?);
            }
        }
    }
    Ok((assemble(dims, &l_tiles, &r_tiles, llen, rlen)?, trace))
}

/// One tile's R update and the unnormalized L logits `β_L − c_L`.
fn tile_step(l: &Tensor, q: &Tensor, k: &Tensor, solver: &SolverConfig) -> Result<(Tensor, Tensor)> {
    let t2 = l.shape()[0];
    let mut ws = TileWorkspace {
        alpha_r: contract(ContractPattern::AlphaR, &[l, q])?,
        c_r: contract(ContractPattern::MassR, &[l])?,
        beta_r: Tensor::zeros(&[0]),
        alpha_l: Tensor::zeros(&[0]),
        c_l: Tensor::zeros(&[0]),
        beta_l: Tensor::zeros(&[0]),
    };
    ws.beta_r = contract(ContractPattern::BetaR, &[&ws.alpha_r, k])?;
    let mut r = ws.beta_r.clone();
    for (row, &c) in r.data_mut().chunks_mut(t2).zip(ws.c_r.data()) {
        let c = c.max(solver.eps_div);
        row.iter_mut().for_each(|x| *x /= c);
        softmax_in_place(row);
    }
    if r.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("R update produced non-finite weights".into()));
    }
    ws.alpha_l = contract(ContractPattern::AlphaL, &[&r, k])?;
    ws.c_l = contract(ContractPattern::EntropyL { log_floor: solver.eps_log }, &[&r])?;
    ws.beta_l = contract(ContractPattern::BetaL, &[&ws.alpha_l, q])?;
    let mut z = ws.beta_l;
    let t1 = z.shape()[1];
    for j2 in 0..t2 {
        for l2 in 0..t1 {
            let base = (j2 * t1 + l2) * t1;
            for k2 in 0..t1 {
                z.data_mut()[base + k2] -= ws.c_l.data()[j2 * t1 + k2];
            }
        }
    }
    Ok((r, z))
}

/// `L′ = softmax over (k₁, i₁, k₂)` for every fixed `(ℓ₁, j₁, j₂, ℓ₂)`.
fn normalize_l(z: &[Tensor], l: &mut [Tensor], dims: TileDims) {
    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let mut buf = Vec::with_capacity(dims.c1 * dims.c2 * t1);
    for l1 in 0..dims.c1 {
        for j1 in 0..dims.c2 {
            for j2 in 0..t2 {
                for l2 in 0..t1 {
                    let row = (j2 * t1 + l2) * t1;
                    buf.clear();
                    for k1 in 0..dims.c1 {
                        for i1 in 0..dims.c2 {
                            let t = dims.tile_index(l1, j1, k1, i1);
                            buf.extend_from_slice(&z[t].data()[row..row + t1]);
                        }
                    }
                    softmax_in_place(&mut buf);
                    let mut chunks = buf.chunks(t1);
                    for k1 in 0..dims.c1 {
                        for i1 in 0..dims.c2 {
                            let t = dims.tile_index(l1, j1, k1, i1);
                            let src = chunks.next().expect("one chunk per tile");
                            l[t].data_mut()[row..row + t1].copy_from_slice(src);
                        }
                    }
                }
            }
        }
    }
}

/// Rows of a Monarch-ordered `N × d` matrix grouped into `c1·c2` tiles of
/// shape `b̃1 × b̃2 × d`, indexed `a·c2 + b`.
fn gather_tiles(m: &DenseMatrix, dims: TileDims) -> Vec<Tensor> {
    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let d = m.cols();
    let mut out = Vec::with_capacity(dims.c1 * dims.c2);
    for a in 0..dims.c1 {
        for b in 0..dims.c2 {
            let mut data = Vec::with_capacity(t1 * t2 * d);
            for x in 0..t1 {
                for y in 0..t2 {
                    data.extend_from_slice(m.row((a * t1 + x) * dims.b2 + b * t2 + y));
                }
            }
            out.push(Tensor::from_vec(&[t1, t2, d], data).expect("sized"));
        }
    }
    out
}

fn assemble(
    dims: TileDims,
    l_tiles: &[Tensor],
    r_tiles: &[Tensor],
    llen: usize,
    rlen: usize,
) -> Result<TiledMonarchFactors> {
    let mut l = Vec::with_capacity(llen * l_tiles.len());
    let mut r = Vec::with_capacity(rlen * r_tiles.len());
    for (lt, rt) in l_tiles.iter().zip(r_tiles) {
        l.extend_from_slice(lt.data());
        r.extend_from_slice(rt.data());
    }
    TiledMonarchFactors::new(
        dims,
        Tensor::from_vec(&dims.l_shape(), l)?,
        Tensor::from_vec(&dims.r_shape(), r)?,
    )
}

/// Applies factors that live in `layout`'s token order to row-major `v` and
/// returns the result in row-major order.
pub fn attention_output(
    factors: &dyn StructuredAttention,
    layout: &LayoutPlan,
    v: &DenseMatrix,
) -> Result<DenseMatrix> {
    let out = factors.apply(&layout.rows_to_monarch(v))?;
    Ok(layout.rows_from_monarch(&out))
}

/// Factors' dense matrix in row-major token order.
pub fn densify_in_token_order(factors: &dyn StructuredAttention, layout: &LayoutPlan) -> DenseMatrix {
    layout.matrix_from_monarch(&factors.densify())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::make_tile_plan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(shape: VideoShape, d: usize, seed: u64) -> AttentionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.n();
        let mut m = || DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let (q, k, v) = (m(), m(), m());
        AttentionProblem::new(shape, q, k, v).unwrap()
    }

    #[test]
    fn rows_are_stochastic() {
        let shape = VideoShape::new(2, 3, 3).unwrap();
        let p = random_problem(shape, 4, 1);
        let (f, _) = solve(&p, &BlockConfig::fh_w(shape), &SolverConfig::with_iterations(3)).unwrap();
        for s in f.densify().row_sums() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        let plan = make_tile_plan(shape, &BlockConfig::fh_w(shape), (1, 3, 1)).unwrap();
        let (f, _) = solve_tiled(&p, &plan, &SolverConfig::with_iterations(2)).unwrap();
        for s in f.densify().row_sums() {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_degenerate_config_is_exact() {
        let shape = VideoShape::new(2, 3, 3).unwrap();
        let p = random_problem(shape, 3, 2);
        let want = p.attention_matrix().matmul(p.v()).unwrap();
        let cfg = BlockConfig::dense(shape);
        let (f, _) = solve(&p, &cfg, &SolverConfig::default()).unwrap();
        let got = attention_output(&f, &cfg.layout(), p.v()).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-8);

        let plan = make_tile_plan(shape, &BlockConfig::fh_w(shape), (1, 1, 1)).unwrap();
        let (f, _) = solve_tiled(&p, &plan, &SolverConfig::default()).unwrap();
        let got = attention_output(&f, &plan.layout(), p.v()).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-8);
    }

    #[test]
    fn first_r_update_under_identity_init() {
        // identity L: α_R = Q and c_R = 1, so R[k,j,:] = softmax_i(Q[k,j]·K[k,i])
        let shape = VideoShape::new(1, 2, 3).unwrap();
        let p = random_problem(shape, 2, 3).with_scale(1.0).unwrap();
        let (f, _) = solve(&p, &BlockConfig::fh_w(shape), &SolverConfig::default()).unwrap();
        let (q, k) = (p.q(), p.k());
        for kk in 0..2 {
            for j in 0..3 {
                let mut row: Vec<f64> = (0..3)
                    .map(|i| (0..2).map(|v| q[(kk * 3 + j, v)] * k[(kk * 3 + i, v)]).sum())
                    .collect();
                softmax_in_place(&mut row);
                for i in 0..3 {
                    assert!((f.r().at(&[kk, j, i]) - row[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn one_by_one_tiling_is_bitwise_untiled() {
        let shape = VideoShape::new(2, 2, 3).unwrap();
        let p = random_problem(shape, 2, 4);
        let cfg = BlockConfig::fh_w(shape);
        let solver = SolverConfig {
            iterations: 4,
            trace_objective: true,
            ..SolverConfig::default()
        };
        let (a, ta) = solve(&p, &cfg, &solver).unwrap();
        let plan = make_tile_plan(shape, &cfg, (2, 2, 3)).unwrap();
        let (b, tb) = solve_tiled(&p, &plan, &solver).unwrap();
        assert_eq!(a.to_tiled(), b);
        assert_eq!(ta, tb);
        assert_eq!(ta.objective.len(), 4);
    }

    #[test]
    fn dense_softmax_maximizes_objective() {
        let shape = VideoShape::new(1, 2, 4).unwrap();
        let p = random_problem(shape, 3, 5);
        let s = p.logits();
        let best = objective_dense(&p.attention_matrix(), &s).unwrap();
        let (f, _) = solve(&p, &BlockConfig::fh_w(shape), &SolverConfig::with_iterations(3)).unwrap();
        assert!(objective_dense(&f.densify(), &s).unwrap() <= best + 1e-12);
        let uniform = DenseMatrix::from_fn(8, 8, |_, _| 1.0 / 8.0);
        let want = s.data().iter().sum::<f64>() / 8.0 + 8.0 * (8f64).ln();
        assert!((objective_dense(&uniform, &s).unwrap() - want).abs() < 1e-12);
        let neg = DenseMatrix::from_fn(8, 8, |r, c| if r == c { -1.0 } else { 0.0 });
        assert!(objective_dense(&neg, &s).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let shape = VideoShape::new(1, 2, 2).unwrap();
        let p = random_problem(shape, 2, 6);
        let cfg = BlockConfig::fh_w(shape);
        assert!(solve(&p, &cfg, &SolverConfig::with_iterations(0)).is_err());
        let bad = SolverConfig {
            eps_div: 0.1,
            ..SolverConfig::default()
        };
        assert!(solve(&p, &cfg, &bad).is_err());
        let other = BlockConfig::fh_w(VideoShape::new(1, 1, 4).unwrap());
        assert!(solve(&p, &other, &SolverConfig::default()).is_err());
    }

    #[test]
    fn overflowing_logits_are_reported() {
        let shape = VideoShape::new(1, 2, 2).unwrap();
        let big = DenseMatrix::from_fn(4, 1, |r, _| if r % 2 == 0 { 1e200 } else { -1e200 });
        let p = AttentionProblem::new(shape, big.clone(), big.clone(), big)
            .unwrap()
            .with_scale(1.0)
            .unwrap();
        assert!(matches!(
            solve(&p, &BlockConfig::fh_w(shape), &SolverConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
