//! Monarch and tiled-Monarch factors.
//!
//! An untiled Monarch matrix of block sizes `(b1, b2)` has entries
//! `M[ℓ·b2 + j, k·b2 + i] = L[j, ℓ, k] · R[k, j, i]`, so every `(j, k)` slice
//! of its blocked view is the rank-1 outer product of `L[j, :, k]` and
//! `R[k, j, :]`.
//!
//! The tiled variant splits `b1 = c1·b̃1` and `b2 = c2·b̃2`. With
//! `ℓ = ℓ₁b̃1 + ℓ₂`, `j = j₁b̃2 + j₂`, `k = k₁b̃1 + k₂`, `i = i₁b̃2 + i₂`:
//!
//! ```text
//! M[ℓ·b2 + j, k·b2 + i] = L′[ℓ₁,j₁,k₁,i₁, j₂,ℓ₂,k₂] · R′[ℓ₁,j₁,k₁,i₁, k₂,j₂,i₂]
//! ```
//!
//! Both tensors are stored tile-major, so each tile `(ℓ₁,j₁,k₁,i₁)` is a
//! contiguous block with the untiled layout for sizes `(b̃1, b̃2)`.

use rayon::prelude::*;

use crate::contract::{contract, ContractPattern};
use crate::error::{out_of_range, Error, Result};
use crate::svd::top_singular_triplet;
use crate::tensor::{DenseMatrix, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSizes {
    pub b1: usize,
    pub b2: usize,
}

impl BlockSizes {
    pub fn new(b1: usize, b2: usize) -> Result<Self> {
        if b1 == 0 || b2 == 0 {
            return Err(Error::Invalid(format!("block sizes ({b1},{b2}) must be positive")));
        }
        Ok(Self { b1, b2 })
    }

    pub fn n(&self) -> usize {
        self.b1 * self.b2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileDims {
    pub b1: usize,
    pub b2: usize,
    pub c1: usize,
    pub c2: usize,
}

impl TileDims {
    pub fn new(b1: usize, b2: usize, c1: usize, c2: usize) -> Result<Self> {
        BlockSizes::new(b1, b2)?;
        if c1 == 0 || !b1.is_multiple_of(c1) {
            return Err(Error::Layout(format!("c1 = {c1} does not divide b1 = {b1}")));
        }
        if c2 == 0 || !b2.is_multiple_of(c2) {
            return Err(Error::Layout(format!("c2 = {c2} does not divide b2 = {b2}")));
        }
        Ok(Self { b1, b2, c1, c2 })
    }

    pub fn untiled(sizes: BlockSizes) -> Self {
        Self {
            b1: sizes.b1,
            b2: sizes.b2,
            c1: 1,
            c2: 1,
        }
    }

    pub fn sizes(&self) -> BlockSizes {
        BlockSizes {
            b1: self.b1,
            b2: self.b2,
        }
    }

    pub fn n(&self) -> usize {
        self.b1 * self.b2
    }

    pub fn tile_b1(&self) -> usize {
        self.b1 / self.c1
    }

    pub fn tile_b2(&self) -> usize {
        self.b2 / self.c2
    }

    pub fn tiles(&self) -> usize {
        self.c1 * self.c2 * self.c1 * self.c2
    }

    pub fn l_shape(&self) -> [usize; 7] {
        let (c1, c2, t1, t2) = (self.c1, self.c2, self.tile_b1(), self.tile_b2());
        [c1, c2, c1, c2, t2, t1, t1]
    }

    pub fn r_shape(&self) -> [usize; 7] {
        let (c1, c2, t1, t2) = (self.c1, self.c2, self.tile_b1(), self.tile_b2());
        [c1, c2, c1, c2, t1, t2, t2]
    }

    /// Elements of one tile of `L′` and of `R′`.
    pub(crate) fn tile_lens(&self) -> (usize, usize) {
        let (t1, t2) = (self.tile_b1(), self.tile_b2());
        (t2 * t1 * t1, t1 * t2 * t2)
    }

    /// Flat tile index of `(ℓ₁, j₁, k₁, i₁)`.
    pub(crate) fn tile_index(&self, l1: usize, j1: usize, k1: usize, i1: usize) -> usize {
        ((l1 * self.c2 + j1) * self.c1 + k1) * self.c2 + i1
    }

    pub(crate) fn tile_coords(&self, t: usize) -> (usize, usize, usize, usize) {
        let i1 = t % self.c2;
        let k1 = (t / self.c2) % self.c1;
        let j1 = (t / (self.c2 * self.c1)) % self.c2;
        let l1 = t / (self.c2 * self.c1 * self.c2);
        (l1, j1, k1, i1)
    }
}

/// Parameter accounting for a factorization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamCount {
    pub l: usize,
    pub r: usize,
    pub total: usize,
    pub density: f64,
}

impl ParamCount {
    fn new(l: usize, r: usize, n: usize) -> Self {
        let total = l + r;
        Self {
            l,
            r,
            total,
            density: total as f64 / (n as f64 * n as f64),
        }
    }
}

pub fn param_count(sizes: BlockSizes) -> ParamCount {
    let BlockSizes { b1, b2 } = sizes;
    ParamCount::new(b2 * b1 * b1, b1 * b2 * b2, b1 * b2)
}

pub fn param_count_tiled(dims: TileDims) -> ParamCount {
    let TileDims { b1, b2, c1, c2 } = dims;
    ParamCount::new(c2 * b2 * b1 * b1, c1 * b1 * b2 * b2, b1 * b2)
}

/// Common interface of the structured approximations.
pub trait StructuredAttention {
    fn n(&self) -> usize;
    fn densify(&self) -> DenseMatrix;
    /// `densify() · v` without forming the dense matrix.
    fn apply(&self, v: &DenseMatrix) -> Result<DenseMatrix>;
    fn param_count(&self) -> ParamCount;
}

fn check_finite(t: &Tensor, name: &str) -> Result<()> {
    if t.data().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} has non-finite entries")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonarchFactors {
    sizes: BlockSizes,
    l: Tensor,
    r: Tensor,
}

impl MonarchFactors {
    pub fn new(sizes: BlockSizes, l: Tensor, r: Tensor) -> Result<Self> {
        let BlockSizes { b1, b2 } = sizes;
        if l.shape() != [b2, b1, b1] {
            return Err(Error::Shape(format!("L must be {b2}x{b1}x{b1}, got {:?}", l.shape())));
        }
        if r.shape() != [b1, b2, b2] {
            return Err(Error::Shape(format!("R must be {b1}x{b2}x{b2}, got {:?}", r.shape())));
        }
        check_finite(&l, "L")?;
        check_finite(&r, "R")?;
        Ok(Self { sizes, l, r })
    }

    /// `L[j] = I`, `R[k] = I`; densifies to the identity.
    pub fn identity(sizes: BlockSizes) -> Self {
        let BlockSizes { b1, b2 } = sizes;
        let l = Tensor::from_fn(&[b2, b1, b1], |ix| (ix[1] == ix[2]) as u8 as f64);
        let r = Tensor::from_fn(&[b1, b2, b2], |ix| (ix[1] == ix[2]) as u8 as f64);
        Self { sizes, l, r }
    }

    pub fn sizes(&self) -> BlockSizes {
        self.sizes
    }

    pub fn l(&self) -> &Tensor {
        &self.l
    }

    pub fn r(&self) -> &Tensor {
        &self.r
    }

    pub fn into_parts(self) -> (BlockSizes, Tensor, Tensor) {
        (self.sizes, self.l, self.r)
    }

    /// Same factors viewed as a `c1 = c2 = 1` tiling.
    pub fn to_tiled(&self) -> TiledMonarchFactors {
        let dims = TileDims::untiled(self.sizes);
        TiledMonarchFactors {
            dims,
            l: self.l.clone().reshaped(&dims.l_shape()).expect("same length"),
            r: self.r.clone().reshaped(&dims.r_shape()).expect("same length"),
        }
    }
}

impl StructuredAttention for MonarchFactors {
    fn n(&self) -> usize {
        self.sizes.n()
    }

    fn densify(&self) -> DenseMatrix {
        let BlockSizes { b1, b2 } = self.sizes;
        let (ld, rd) = (self.l.data(), self.r.data());
        let n = b1 * b2;
        let mut m = DenseMatrix::zeros(n, n);
        for ell in 0..b1 {
            for j in 0..b2 {
                let row = m.row_mut(ell * b2 + j);
                for k in 0..b1 {
                    let lv = ld[(j * b1 + ell) * b1 + k];
                    let rrow = &rd[(k * b2 + j) * b2..(k * b2 + j + 1) * b2];
                    for (x, &rv) in row[k * b2..(k + 1) * b2].iter_mut().zip(rrow) {
                        *x = lv * rv;
                    }
                }
            }
        }
        m
    }

    fn apply(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        let BlockSizes { b1, b2 } = self.sizes;
        if v.rows() != b1 * b2 {
            return Err(Error::Shape(format!(
                "V has {} rows, factors act on N = {}",
                v.rows(),
                b1 * b2
            )));
        }
        let d = v.cols();
        let vt = Tensor::from_vec(&[b1, b2, d], v.data().to_vec())?;
        let y = contract(ContractPattern::ValueY, &[&self.r, &vt])?;
        let o = contract(ContractPattern::OutputO, &[&self.l, &y])?;
        DenseMatrix::from_vec(b1 * b2, d, o.data().to_vec())
    }

    fn param_count(&self) -> ParamCount {
        param_count(self.sizes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiledMonarchFactors {
    dims: TileDims,
    l: Tensor,
    r: Tensor,
}

impl TiledMonarchFactors {
    pub fn new(dims: TileDims, l: Tensor, r: Tensor) -> Result<Self> {
        if l.shape() != dims.l_shape() {
            return Err(Error::Shape(format!(
                "L' must have shape {:?}, got {:?}",
                dims.l_shape(),
                l.shape()
            )));
        }
        if r.shape() != dims.r_shape() {
            return Err(Error::Shape(format!(
                "R' must have shape {:?}, got {:?}",
                dims.r_shape(),
                r.shape()
            )));
        }
        check_finite(&l, "L'")?;
        check_finite(&r, "R'")?;
        Ok(Self { dims, l, r })
    }

    pub fn zeros(dims: TileDims) -> Self {
        Self {
            dims,
            l: Tensor::zeros(&dims.l_shape()),
            r: Tensor::zeros(&dims.r_shape()),
        }
    }

    pub fn dims(&self) -> TileDims {
        self.dims
    }

    pub fn l(&self) -> &Tensor {
        &self.l
    }

    pub fn r(&self) -> &Tensor {
        &self.r
    }

    pub fn into_parts(self) -> (TileDims, Tensor, Tensor) {
        (self.dims, self.l, self.r)
    }

    /// Reshaped copy as untiled factors; only valid for `c1 = c2 = 1`.
    pub fn to_untiled(&self) -> Result<MonarchFactors> {
        if self.dims.c1 != 1 || self.dims.c2 != 1 {
            return Err(Error::Invalid("only a 1x1 tiling has an untiled equivalent".into()));
        }
        let BlockSizes { b1, b2 } = self.dims.sizes();
        Ok(MonarchFactors {
            sizes: self.dims.sizes(),
            l: self.l.clone().reshaped(&[b2, b1, b1])?,
            r: self.r.clone().reshaped(&[b1, b2, b2])?,
        })
    }
}

impl StructuredAttention for TiledMonarchFactors {
    fn n(&self) -> usize {
        self.dims.n()
    }

    fn densify(&self) -> DenseMatrix {
        let dims = self.dims;
        let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
        let (llen, rlen) = dims.tile_lens();
        let b2 = dims.b2;
        let n = dims.n();
        let mut m = DenseMatrix::zeros(n, n);
        for t in 0..dims.tiles() {
            let (l1, j1, k1, i1) = dims.tile_coords(t);
            let lt = &self.l.data()[t * llen..(t + 1) * llen];
            let rt = &self.r.data()[t * rlen..(t + 1) * rlen];
            for j2 in 0..t2 {
                let j = j1 * t2 + j2;
                for l2 in 0..t1 {
                    let row = (l1 * t1 + l2) * b2 + j;
                    for k2 in 0..t1 {
                        let lv = lt[(j2 * t1 + l2) * t1 + k2];
                        let col0 = (k1 * t1 + k2) * b2 + i1 * t2;
                        let rrow = &rt[(k2 * t2 + j2) * t2..(k2 * t2 + j2 + 1) * t2];
                        for (i2, &rv) in rrow.iter().enumerate() {
                            m[(row, col0 + i2)] = lv * rv;
                        }
                    }
                }
            }
        }
        m
    }

    fn apply(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        let dims = self.dims;
        let n = dims.n();
        if v.rows() != n {
            return Err(Error::Shape(format!("V has {} rows, factors act on N = {n}", v.rows())));
        }
        let d = v.cols();
        let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
        let (llen, rlen) = dims.tile_lens();
        let b2 = dims.b2;
        let vd = v.data();
        // each row tile (ℓ₁, j₁) owns a disjoint set of output rows
        let row_tiles: Vec<Vec<(usize, Vec<f64>)>> = (0..dims.c1 * dims.c2)
            .into_par_iter()
            .map(|rt_ix| {
                let (l1, j1) = (rt_ix / dims.c2, rt_ix % dims.c2);
                let mut out = vec![vec![0.0; d]; t1 * t2];
                let mut y = vec![0.0; d];
                for k1 in 0..dims.c1 {
                    for i1 in 0..dims.c2 {
                        let t = dims.tile_index(l1, j1, k1, i1);
                        let lt = &self.l.data()[t * llen..(t + 1) * llen];
                        let rt = &self.r.data()[t * rlen..(t + 1) * rlen];
                        for k2 in 0..t1 {
                            let key_row0 = (k1 * t1 + k2) * b2 + i1 * t2;
                            for j2 in 0..t2 {
                                y.iter_mut().for_each(|x| *x = 0.0);
                                let rrow = &rt[(k2 * t2 + j2) * t2..(k2 * t2 + j2 + 1) * t2];
                                for (i2, &rv) in rrow.iter().enumerate() {
                                    let vrow = &vd[(key_row0 + i2) * d..(key_row0 + i2 + 1) * d];
                                    for (a, &b) in y.iter_mut().zip(vrow) {
                                        *a += rv * b;
                                    }
                                }
                                for l2 in 0..t1 {
                                    let lv = lt[(j2 * t1 + l2) * t1 + k2];
                                    for (a, &b) in out[l2 * t2 + j2].iter_mut().zip(&y) {
                                        *a += lv * b;
                                    }
                                }
                            }
                        }
                    }
                }
                out.into_iter()
                    .enumerate()
                    .map(|(s, row)| {
                        let (l2, j2) = (s / t2, s % t2);
                        ((l1 * t1 + l2) * b2 + j1 * t2 + j2, row)
                    })
                    .collect()
            })
            .collect();
        let mut o = DenseMatrix::zeros(n, d);
        for (row, vals) in row_tiles.into_iter().flatten() {
            o.row_mut(row).copy_from_slice(&vals);
        }
        Ok(o)
    }

    fn param_count(&self) -> ParamCount {
        param_count_tiled(self.dims)
    }
}

fn check_square(target: &DenseMatrix, n: usize) -> Result<()> {
    if target.rows() != n || target.cols() != n {
        return Err(Error::Shape(format!(
            "target is {}x{}, block sizes need {n}x{n}",
            target.rows(),
            target.cols()
        )));
    }
    Ok(())
}

/// Frobenius-optimal Monarch approximation: an independent rank-1
/// projection of every `(j, k)` slice of the blocked view.
pub fn project(target: &DenseMatrix, sizes: BlockSizes) -> Result<MonarchFactors> {
    let tiled = project_tiled(target, TileDims::untiled(sizes))?;
    tiled.to_untiled()
}

/// Per-tile, per-slice rank-1 projection.
pub fn project_tiled(target: &DenseMatrix, dims: TileDims) -> Result<TiledMonarchFactors> {
    check_square(target, dims.n())?;
    if !target.is_finite() {
        return Err(Error::NonFinite("projection target".into()));
    }
    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let (llen, rlen) = dims.tile_lens();
    let b2 = dims.b2;
    let tiles: Vec<(Vec<f64>, Vec<f64>)> = (0..dims.tiles())
        .into_par_iter()
        .map(|t| {
            let (l1, j1, k1, i1) = dims.tile_coords(t);
            let mut lt = vec![0.0; llen];
            let mut rt = vec![0.0; rlen];
            for j2 in 0..t2 {
                for k2 in 0..t1 {
                    let slice = DenseMatrix::from_fn(t1, t2, |l2, i2| {
                        target[(
                            (l1 * t1 + l2) * b2 + j1 * t2 + j2,
                            (k1 * t1 + k2) * b2 + i1 * t2 + i2,
                        )]
                    });
                    let (sigma, u, v) = top_singular_triplet(&slice);
                    for (l2, &ul) in u.iter().enumerate() {
                        lt[(j2 * t1 + l2) * t1 + k2] = sigma * ul;
                    }
                    rt[(k2 * t2 + j2) * t2..(k2 * t2 + j2 + 1) * t2].copy_from_slice(&v);
                }
            }
            (lt, rt)
        })
        .collect();
    let mut l = Vec::with_capacity(llen * tiles.len());
    let mut r = Vec::with_capacity(rlen * tiles.len());
    for (lt, rt) in tiles {
        l.extend(lt);
        r.extend(rt);
    }
    TiledMonarchFactors::new(
        dims,
        Tensor::from_vec(&dims.l_shape(), l)?,
        Tensor::from_vec(&dims.r_shape(), r)?,
    )
}

/// Tiled factors that reproduce `source` exactly: `L′` ignores `i₁` and
/// `R′` ignores `ℓ₁`.
pub fn embed_tied(source: &MonarchFactors, dims: TileDims) -> Result<TiledMonarchFactors> {
    if dims.sizes() != source.sizes {
        return Err(Error::Shape(format!(
            "tiling over ({},{}) applied to factors of sizes ({},{})",
            dims.b1, dims.b2, source.sizes.b1, source.sizes.b2
        )));
    }
    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let BlockSizes { b1, b2 } = source.sizes;
    let (ld, rd) = (source.l.data(), source.r.data());
    let l = Tensor::from_fn(&dims.l_shape(), |ix| {
        let [l1, j1, k1, _i1, j2, l2, k2] = [ix[0], ix[1], ix[2], ix[3], ix[4], ix[5], ix[6]];
        let (j, ell, k) = (j1 * t2 + j2, l1 * t1 + l2, k1 * t1 + k2);
        ld[(j * b1 + ell) * b1 + k]
    });
    let r = Tensor::from_fn(&dims.r_shape(), |ix| {
        let [_l1, j1, k1, i1, k2, j2, i2] = [ix[0], ix[1], ix[2], ix[3], ix[4], ix[5], ix[6]];
        let (k, j, i) = (k1 * t1 + k2, j1 * t2 + j2, i1 * t2 + i2);
        rd[(k * b2 + j) * b2 + i]
    });
    Ok(TiledMonarchFactors { dims, l, r })
}

/// A matrix inside the tiled family but outside the untiled one: two unit
/// entries of the `(0, 0)` slice that fall in different tiles and share no
/// row or column, so that slice has rank 2.
pub fn strictness_counterexample(dims: TileDims) -> Result<DenseMatrix> {
    if dims.c1 == 1 && dims.c2 == 1 {
        return Err(Error::Invalid("an untiled plan has no strictness counterexample".into()));
    }
    let second = if dims.c1 > 1 {
        (dims.tile_b1(), 1)
    } else {
        (1, dims.tile_b2())
    };
    strictness_counterexample_at(dims, (0, 0), second)
}

/// As [`strictness_counterexample`] with explicit slice positions
/// `(ℓ, i)` of the two unit entries.
pub fn strictness_counterexample_at(
    dims: TileDims,
    first: (usize, usize),
    second: (usize, usize),
) -> Result<DenseMatrix> {
    for &(ell, i) in &[first, second] {
        if ell >= dims.b1 {
            return Err(out_of_range("slice row", ell, format!("0..{}", dims.b1)));
        }
        if i >= dims.b2 {
            return Err(out_of_range("slice column", i, format!("0..{}", dims.b2)));
        }
    }
    let (t1, t2) = (dims.tile_b1(), dims.tile_b2());
    let tile_of = |(ell, i): (usize, usize)| (ell / t1, i / t2);
    if first.0 == second.0 || first.1 == second.1 || tile_of(first) == tile_of(second) {
        return Err(Error::Invalid(format!(
            "entries {first:?} and {second:?} must sit in different tiles with distinct rows and columns"
        )));
    }
    let mut f = TiledMonarchFactors::zeros(dims);
    for (ell, i) in [first, second] {
        let (l1, l2, i1, i2) = (ell / t1, ell % t1, i / t2, i % t2);
        f.l.set(&[l1, 0, 0, i1, 0, l2, 0], 1.0);
        f.r.set(&[l1, 0, 0, i1, 0, 0, i2], 1.0);
    }
    Ok(f.densify())
}

/// Either kind of factorization, as stored in a factor container.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyFactors {
    Untiled(MonarchFactors),
    Tiled(TiledMonarchFactors),
}

impl AnyFactors {
    fn dims(&self) -> TileDims {
        match self {
            AnyFactors::Untiled(f) => TileDims::untiled(f.sizes),
            AnyFactors::Tiled(f) => f.dims,
        }
    }

    fn tensors(&self) -> (&Tensor, &Tensor) {
        match self {
            AnyFactors::Untiled(f) => (&f.l, &f.r),
            AnyFactors::Tiled(f) => (&f.l, &f.r),
        }
    }
}

const FACTOR_MAGIC: &[u8; 4] = b"MNR1";

/// Binary container: `MNR1`, little-endian u32 kind (0 untiled, 1 tiled),
/// b1, b2, c1, c2, then `L` and `R` as f64.
pub fn encode_factors(factors: &AnyFactors) -> Vec<u8> {
    let dims = factors.dims();
    let kind = matches!(factors, AnyFactors::Tiled(_)) as u32;
    let (l, r) = factors.tensors();
    let mut out = Vec::with_capacity(24 + 8 * (l.len() + r.len()));
    out.extend_from_slice(FACTOR_MAGIC);
    for x in [kind, dims.b1 as u32, dims.b2 as u32, dims.c1 as u32, dims.c2 as u32] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in l.data().iter().chain(r.data()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_factors(bytes: &[u8]) -> Result<AnyFactors> {
    let mut cur = crate::bench::tensor_io::Cursor::new(bytes);
    cur.magic(FACTOR_MAGIC)?;
    let header_at = cur.offset();
    let kind = cur.u32()?;
    let [b1, b2, c1, c2] = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|x| x as usize);
    let dims = TileDims::new(b1, b2, c1, c2).map_err(|e| Error::Parse {
        offset: header_at,
        msg: e.to_string(),
    })?;
    let (l_len, r_len) = (
        dims.l_shape().iter().product::<usize>(),
        dims.r_shape().iter().product::<usize>(),
    );
    let l = cur.f64s(l_len)?;
    let r = cur.f64s(r_len)?;
    cur.finish()?;
    match kind {
        0 => {
            if c1 != 1 || c2 != 1 {
                return Err(Error::Parse {
                    offset: header_at,
                    msg: "untiled factors with tiling factors other than 1".into(),
                });
            }
            Ok(AnyFactors::Untiled(MonarchFactors::new(
                dims.sizes(),
                Tensor::from_vec(&[b2, b1, b1], l)?,
                Tensor::from_vec(&[b1, b2, b2], r)?,
            )?))
        }
        1 => Ok(AnyFactors::Tiled(TiledMonarchFactors::new(
            dims,
            Tensor::from_vec(&dims.l_shape(), l)?,
            Tensor::from_vec(&dims.r_shape(), r)?,
        )?)),
        other => Err(Error::Parse {
            offset: header_at,
            msg: format!("unknown factor kind {other}"),
        }),
    }
}

/// Line-oriented dump: a header line then one `name index value` line per
/// entry, values printed with 17 significant digits.
pub fn text_dump(factors: &AnyFactors) -> String {
    use std::fmt::Write;
    let dims = factors.dims();
    let (l, r) = factors.tensors();
    let kind = match factors {
        AnyFactors::Untiled(_) => "untiled",
        AnyFactors::Tiled(_) => "tiled",
    };
    let mut s = format!(
        "{kind} b1={} b2={} c1={} c2={}\n",
        dims.b1, dims.b2, dims.c1, dims.c2
    );
    for (name, t) in [("L", l), ("R", r)] {
        for (flat, x) in t.data().iter().enumerate() {
            let mut rest = flat;
            let mut idx = vec![0; t.shape().len()];
            for (slot, &n) in idx.iter_mut().zip(t.shape()).rev() {
                *slot = rest % n;
                rest /= n;
            }
            let idx: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            writeln!(s, "{name} {} {:.16e}", idx.join(","), x).expect("string write");
        }
    }
    s
}
