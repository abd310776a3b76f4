//! Synthetic 3D attention maps `A = D + S + ε`.
//!
//! `D` is a product of per-axis distance kernels, `S` a sparse set of unit
//! "semantic" spikes and `ε` bounded uniform noise. All matrices are in
//! row-major token order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{out_of_range, Error, Result};
use crate::layout::{build_permutation, BlockConfig, TokenOrdering, VideoShape};
use crate::solver::AttentionProblem;
use crate::svd::jacobi_svd;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistanceKernel {
    /// `γ^|Δ|` with `γ ∈ (0, 1]`.
    Exponential(f64),
    /// `1 / (1 + |Δ|)`
    Rational,
    Constant,
}

impl DistanceKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistanceKernel::Exponential(g) if !(g > 0.0 && g <= 1.0) => {
                Err(out_of_range("kernel gamma", g, "(0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, delta: usize) -> f64 {
        match *self {
            DistanceKernel::Exponential(g) => g.powi(delta as i32),
            DistanceKernel::Rational => 1.0 / (1.0 + delta as f64),
            DistanceKernel::Constant => 1.0,
        }
    }

    /// `len × len` matrix of `d(x, y)`.
    pub fn matrix(&self, len: usize) -> DenseMatrix {
        DenseMatrix::from_fn(len, len, |x, y| self.eval(x.abs_diff(y)))
    }
}

/// Temporal, height and width kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernels {
    pub t: DistanceKernel,
    pub h: DistanceKernel,
    pub w: DistanceKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            t: DistanceKernel::Exponential(0.7),
            h: DistanceKernel::Exponential(0.85),
            w: DistanceKernel::Exponential(0.85),
        }
    }
}

impl Kernels {
    pub fn uniform(kernel: DistanceKernel) -> Self {
        Self {
            t: kernel,
            h: kernel,
            w: kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SemanticCase {
    Empty,
    Singleton,
    RowConfined,
    ColConfined,
    AdversarialMulti,
}

/// Sparse `(query, key)` spikes of `S`, indices in row-major token order.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticPattern {
    pub pairs: Vec<(usize, usize)>,
    pub scale: f64,
    pub case: Option<SemanticCase>,
}

impl Default for SemanticPattern {
    fn default() -> Self {
        Self::empty()
    }
}

impl SemanticPattern {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            scale: 1.0,
            case: Some(SemanticCase::Empty),
        }
    }

    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Self {
        Self {
            pairs,
            scale: 1.0,
            case: None,
        }
    }

    /// `count` distinct pairs drawn uniformly.
    pub fn random(n: usize, count: usize, rng: &mut impl Rng) -> Result<Self> {
        if count > n * n {
            return Err(out_of_range("semantic entries", count, format!("0..={}", n * n)));
        }
        let pairs = sample(rng, n * n, count)
            .into_iter()
            .map(|x| (x / n, x % n))
            .collect();
        Ok(Self::from_pairs(pairs))
    }

    pub fn matrix(&self, n: usize) -> Result<DenseMatrix> {
        let mut s = DenseMatrix::zeros(n, n);
        for &(q, k) in &self.pairs {
            if q >= n || k >= n {
                return Err(out_of_range("semantic pair", format!("({q},{k})"), format!("indices < {n}")));
            }
            s[(q, k)] = self.scale;
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Normalize {
    Raw,
    RowNormalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticModelSpec {
    pub shape: VideoShape,
    pub kernels: Kernels,
    pub semantic: SemanticPattern,
    pub noise: f64,
    pub normalize: Normalize,
    pub seed: u64,
}

impl SyntheticModelSpec {
    /// Pure positional map: default kernels, no spikes, no noise, raw.
    pub fn positional(shape: VideoShape) -> Self {
        Self {
            shape,
            kernels: Kernels::default(),
            semantic: SemanticPattern::empty(),
            noise: 0.0,
            normalize: Normalize::Raw,
            seed: 0,
        }
    }
}

/// A generated map and its raw components; `a` is `d + s + noise`, row
/// normalized when the spec asks for it.
#[derive(Clone, Debug)]
pub struct SyntheticAttention {
    pub a: DenseMatrix,
    pub d: DenseMatrix,
    pub s: DenseMatrix,
    pub noise: DenseMatrix,
}

/// The separable positional component in row-major token order.
pub fn positional_matrix(shape: VideoShape, kernels: &Kernels) -> DenseMatrix {
    let (kt, kh, kw) = (
        kernels.t.matrix(shape.f),
        kernels.h.matrix(shape.h),
        kernels.w.matrix(shape.w),
    );
    let n = shape.n();
    DenseMatrix::from_fn(n, n, |r, c| {
        let (f0, h0, w0) = shape.coords(r);
        let (f1, h1, w1) = shape.coords(c);
        kw[(w0, w1)] * kh[(h0, h1)] * kt[(f0, f1)]
    })
}

pub fn generate(spec: &SyntheticModelSpec) -> Result<SyntheticAttention> {
    for k in [spec.kernels.t, spec.kernels.h, spec.kernels.w] {
        k.validate()?;
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(out_of_range("noise", spec.noise, "[0, inf)"));
    }
    let n = spec.shape.n();
    let d = positional_matrix(spec.shape, &spec.kernels);
    let s = spec.semantic.matrix(n)?;
    let noise = if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-spec.noise..=spec.noise))
    } else {
        DenseMatrix::zeros(n, n)
    };
    let mut a = DenseMatrix::from_fn(n, n, |r, c| d[(r, c)] + s[(r, c)] + noise[(r, c)]);
    if spec.normalize == Normalize::RowNormalized {
        for r in 0..n {
            let total: f64 = a.row(r).iter().sum();
            if total <= 0.0 {
                return Err(Error::Invalid(format!("row {r} has non-positive mass {total}")));
            }
            a.row_mut(r).iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(SyntheticAttention { a, d, s, noise })
}

/// An attention problem whose exact attention matrix is the row-normalized
/// `max(A, 1e-12)`: `Q = log A`, `K = I`, unit logit scale. `V` is uniform
/// in `[-1, 1]` with `d_v` columns.
pub fn synthetic_problem(spec: &SyntheticModelSpec, d_v: usize, v_seed: u64) -> Result<AttentionProblem> {
    let gen = generate(spec)?;
    let n = spec.shape.n();
    let q = DenseMatrix::from_fn(n, n, |r, c| gen.a[(r, c)].max(1e-12).ln());
    let mut rng = ChaCha8Rng::seed_from_u64(v_seed);
    let v = DenseMatrix::from_fn(n, d_v, |_, _| rng.gen_range(-1.0..1.0));
    AttentionProblem::new(spec.shape, q, DenseMatrix::identity(n), v)?.with_scale(1.0)
}

/// `σ₂ / σ₁` of every block of the permuted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank1Report {
    /// Indexed `j · b1 + k` over the `b2 × b1` grid of blocks.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Permutes rows into the config's transposed order and columns into its
/// Monarch order, then checks each contiguous `b1 × b2` block for rank 1.
pub fn verify_blockwise_rank1(m: &DenseMatrix, config: &BlockConfig, tol: f64) -> Result<Rank1Report> {
    let shape = config.shape();
    let n = shape.n();
    if m.rows() != n || m.cols() != n {
        return Err(Error::Shape(format!("matrix is {}x{}, grid has N = {n}", m.rows(), m.cols())));
    }
    let phi = TokenOrdering::row_major(shape);
    let rows = build_permutation(&phi, &config.rho_ordering())?;
    let cols = build_permutation(&phi, &config.monarch_ordering())?;
    let permuted = DenseMatrix::from_fn(n, n, |r, c| m[(rows.inverse()[r], cols.inverse()[c])]);
    let (b1, b2) = (config.b1(), config.b2());
    let mut ratios = Vec::with_capacity(b1 * b2);
    for j in 0..b2 {
        for k in 0..b1 {
            let block = DenseMatrix::from_fn(b1, b2, |l, i| permuted[(j * b1 + l, k * b2 + i)]);
            ratios.push(second_singular_ratio(&block));
        }
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(Rank1Report {
        ratios,
        max_ratio,
        tol,
        passed: max_ratio <= tol,
    })
}

pub fn second_singular_ratio(block: &DenseMatrix) -> f64 {
    let s = jacobi_svd(block).singular_values;
    match (s.first(), s.get(1)) {
        (Some(&s1), Some(&s2)) if s1 > 0.0 => s2 / s1,
        _ => 0.0,
    }
}

/// A `b1 × b2` block realizing one semantic case: a separable positional
/// block (`Empty`), a lone spike, spikes sharing a row or a column, or two
/// spikes on a diagonal (rank 2).
pub fn case_fixture(case: SemanticCase, config: &BlockConfig) -> Result<DenseMatrix> {
    let (b1, b2) = (config.b1(), config.b2());
    let mut block = DenseMatrix::zeros(b1, b2);
    match case {
        SemanticCase::Empty => {
            let d = positional_matrix(config.shape(), &Kernels::default());
            let phi = TokenOrdering::row_major(config.shape());
            let rows = build_permutation(&phi, &config.rho_ordering())?;
            let cols = build_permutation(&phi, &config.monarch_ordering())?;
            for l in 0..b1 {
                for i in 0..b2 {
                    block[(l, i)] = d[(rows.inverse()[l], cols.inverse()[i])];
                }
            }
        }
        SemanticCase::Singleton => block[(b1 / 2, b2 / 2)] = 1.0,
        SemanticCase::RowConfined => {
            for i in (0..b2).step_by(2) {
                block[(0, i)] = 1.0;
            }
        }
        SemanticCase::ColConfined => {
            for l in (0..b1).step_by(2) {
                block[(l, 0)] = 1.0;
            }
        }
        SemanticCase::AdversarialMulti => {
            if b1 < 2 || b2 < 2 {
                return Err(Error::Invalid(format!(
                    "a rank-2 block needs b1, b2 >= 2, got ({b1},{b2})"
                )));
            }
            block[(0, 0)] = 1.0;
            block[(1, 1)] = 1.0;
        }
    }
    Ok(block)
}
