//! Video token grids, flatten orderings, and Monarch block configurations.
//!
//! Tokens of an `(f, h, w)` video are flattened row-major by default
//! (`φ(f₀,h₀,w₀) = ((f₀·h) + h₀)·w + w₀`). A [`BlockConfig`] says which
//! axes make up the two Monarch block sizes; it is *aligned* when every
//! axis sits wholly inside one of them. Each config induces a "Monarch
//! order" in which index `g₁·b2 + g₂` enumerates (b1-group, b2-group)
//! coordinates, and the matching transposed order `g₂·b1 + g₁`.

use std::fmt;

use crate::error::{out_of_range, Error, Result};
use crate::monarch::{BlockSizes, TileDims};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    F,
    H,
    W,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::F, Axis::H, Axis::W];

    pub fn letter(self) -> char {
        match self {
            Axis::F => 'f',
            Axis::H => 'h',
            Axis::W => 'w',
        }
    }

    fn from_letter(c: char) -> Option<Axis> {
        match c {
            'f' => Some(Axis::F),
            'h' => Some(Axis::H),
            'w' => Some(Axis::W),
            _ => None,
        }
    }
}

/// Token grid of `f` frames of `h × w` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VideoShape {
    pub f: usize,
    pub h: usize,
    pub w: usize,
}

impl VideoShape {
    pub fn new(f: usize, h: usize, w: usize) -> Result<Self> {
        if f == 0 || h == 0 || w == 0 {
            return Err(Error::Layout(format!("video shape ({f},{h},{w}) has an empty axis")));
        }
        Ok(Self { f, h, w })
    }

    pub fn n(&self) -> usize {
        self.f * self.h * self.w
    }

    pub fn len(&self, axis: Axis) -> usize {
        match axis {
            Axis::F => self.f,
            Axis::H => self.h,
            Axis::W => self.w,
        }
    }

    /// Inverse of the row-major flattening.
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let w0 = index % self.w;
        let h0 = (index / self.w) % self.h;
        let f0 = index / (self.w * self.h);
        (f0, h0, w0)
    }

    pub fn contains(&self, (f0, h0, w0): (usize, usize, usize)) -> bool {
        f0 < self.f && h0 < self.h && w0 < self.w
    }

    /// Positions in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n()).map(|i| self.coords(i))
    }
}

impl fmt::Display for VideoShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.f, self.h, self.w)
    }
}

fn coord(pos: (usize, usize, usize), axis: Axis) -> usize {
    match axis {
        Axis::F => pos.0,
        Axis::H => pos.1,
        Axis::W => pos.2,
    }
}

/// One mixed-radix digit of an ordering: `(pos[axis] / stride) % size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Digit {
    pub axis: Axis,
    pub stride: usize,
    pub size: usize,
}

impl Digit {
    pub fn whole(axis: Axis, shape: &VideoShape) -> Self {
        Self {
            axis,
            stride: 1,
            size: shape.len(axis),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OrderingKind {
    /// `φ`: frame, height, width with width contiguous.
    RowMajor,
    /// `ρ = w₀·f·h + (f₀·h + h₀)`: width made noncontiguous.
    WidthNoncontiguous,
    /// Mixed-radix digits, most significant first.
    Generalized(Vec<Digit>),
    /// Row-major index `ℓ·b2 + j` sent to `j·b1 + ℓ`: the reshape-transpose
    /// permutation of a flat `(b1, b2)` blocking.
    BlockTransposed { b1: usize, b2: usize },
}

/// A bijection from grid positions to `[0, N)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenOrdering {
    shape: VideoShape,
    kind: OrderingKind,
}

impl TokenOrdering {
    pub fn new(shape: VideoShape, kind: OrderingKind) -> Result<Self> {
        let kind = match kind {
            OrderingKind::Generalized(digits) => {
                OrderingKind::Generalized(validate_digits(&shape, digits)?)
            }
            OrderingKind::BlockTransposed { b1, b2 } if b1 * b2 != shape.n() => {
                return Err(Error::Layout(format!(
                    "block transpose ({b1},{b2}) does not cover N = {}",
                    shape.n()
                )))
            }
            other => other,
        };
        Ok(Self { shape, kind })
    }

    pub fn row_major(shape: VideoShape) -> Self {
        Self {
            shape,
            kind: OrderingKind::RowMajor,
        }
    }

    pub fn width_noncontiguous(shape: VideoShape) -> Self {
        Self {
            shape,
            kind: OrderingKind::WidthNoncontiguous,
        }
    }

    /// `index_within(major) · size(minor) + index_within(minor)`, row-major
    /// inside each group.
    pub fn grouped(shape: VideoShape, major: &[Axis], minor: &[Axis]) -> Result<Self> {
        let digits = major
            .iter()
            .chain(minor)
            .map(|&a| Digit::whole(a, &shape))
            .collect();
        Self::new(shape, OrderingKind::Generalized(digits))
    }

    pub fn shape(&self) -> VideoShape {
        self.shape
    }

    pub fn kind(&self) -> &OrderingKind {
        &self.kind
    }

    pub fn flatten_index(&self, pos: (usize, usize, usize)) -> Result<usize> {
        if !self.shape.contains(pos) {
            return Err(out_of_range(
                "token position",
                format!("{pos:?}"),
                format!("grid {}", self.shape),
            ));
        }
        Ok(self.index_of(pos))
    }

    pub(crate) fn index_of(&self, pos: (usize, usize, usize)) -> usize {
        let VideoShape { f, h, w } = self.shape;
        let (f0, h0, w0) = pos;
        match &self.kind {
            OrderingKind::RowMajor => ((f0 * h) + h0) * w + w0,
            OrderingKind::WidthNoncontiguous => w0 * f * h + (f0 * h + h0),
            OrderingKind::Generalized(digits) => digits.iter().fold(0, |acc, d| {
                acc * d.size + (coord(pos, d.axis) / d.stride) % d.size
            }),
            OrderingKind::BlockTransposed { b1, b2 } => {
                let phi = ((f0 * h) + h0) * w + w0;
                (phi % b2) * b1 + phi / b2
            }
        }
    }
}

fn validate_digits(shape: &VideoShape, digits: Vec<Digit>) -> Result<Vec<Digit>> {
    let digits: Vec<Digit> = digits.into_iter().filter(|d| d.size != 1).collect();
    for axis in Axis::ALL {
        let mut own: Vec<&Digit> = digits.iter().filter(|d| d.axis == axis).collect();
        own.sort_by_key(|d| d.stride);
        let mut expected = 1;
        for d in own {
            if d.stride != expected || d.size == 0 {
                return Err(Error::Layout(format!(
                    "digits of axis {} do not form a mixed radix (stride {} where {} expected)",
                    axis.letter(),
                    d.stride,
                    expected
                )));
            }
            expected *= d.size;
        }
        if expected != shape.len(axis) {
            return Err(Error::Layout(format!(
                "digits of axis {} cover {} values, axis has {}",
                axis.letter(),
                expected,
                shape.len(axis)
            )));
        }
    }
    Ok(digits)
}

/// Permutation between two orderings of the same grid. `forward[s] = t`
/// means the token at index `s` under `from` sits at index `t` under `to`;
/// as a matrix, `P[t, s] = 1`, so `P · x` re-orders `from`-ordered rows into
/// `to` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

pub fn build_permutation(from: &TokenOrdering, to: &TokenOrdering) -> Result<LayoutPermutation> {
    if from.shape() != to.shape() {
        return Err(Error::Shape(format!(
            "orderings over {} and {}",
            from.shape(),
            to.shape()
        )));
    }
    let n = from.shape().n();
    let mut forward = vec![usize::MAX; n];
    let mut inverse = vec![usize::MAX; n];
    for pos in from.shape().positions() {
        let s = from.index_of(pos);
        let t = to.index_of(pos);
        forward[s] = t;
        inverse[t] = s;
    }
    if forward.contains(&usize::MAX) || inverse.contains(&usize::MAX) {
        return Err(Error::Layout("ordering is not a bijection".into()));
    }
    Ok(LayoutPermutation { forward, inverse })
}

impl LayoutPermutation {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &t)| i == t)
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        let n = self.len();
        let mut p = DenseMatrix::zeros(n, n);
        for (s, &t) in self.forward.iter().enumerate() {
            p[(t, s)] = 1.0;
        }
        p
    }

    /// `P · m`
    pub fn permute_rows(&self, m: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), m.cols(), |t, c| m[(self.inverse[t], c)])
    }

    /// `Pᵀ · m`
    pub fn unpermute_rows(&self, m: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), m.cols(), |s, c| m[(self.forward[s], c)])
    }

    /// `P · m · Pᵀ`
    pub fn conjugate(&self, m: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), m.cols(), |t, u| m[(self.inverse[t], self.inverse[u])])
    }

    /// `Pᵀ · m · P`
    pub fn unconjugate(&self, m: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), m.cols(), |s, u| m[(self.forward[s], self.forward[u])])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Grouping {
    /// `major` axes make up `b1`, `minor` axes make up `b2`.
    Aligned { major: Vec<Axis>, minor: Vec<Axis> },
    /// A plain reshape of the row-major token index into `b1 × b2`.
    Flat,
}

/// Monarch block sizes over a video grid plus the axis grouping that
/// defines the token order they act on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockConfig {
    shape: VideoShape,
    b1: usize,
    b2: usize,
    grouping: Grouping,
}

impl BlockConfig {
    pub fn aligned(shape: VideoShape, major: &[Axis], minor: &[Axis]) -> Result<Self> {
        let mut all: Vec<Axis> = major.iter().chain(minor).copied().collect();
        all.sort();
        if all != Axis::ALL {
            return Err(Error::Layout(format!(
                "axis groups {:?} | {:?} must partition f, h, w",
                major, minor
            )));
        }
        let mut major = major.to_vec();
        let mut minor = minor.to_vec();
        major.sort();
        minor.sort();
        let b1 = major.iter().map(|&a| shape.len(a)).product();
        let b2 = minor.iter().map(|&a| shape.len(a)).product();
        Ok(Self {
            shape,
            b1,
            b2,
            grouping: Grouping::Aligned { major, minor },
        })
    }

    pub fn flat(shape: VideoShape, b1: usize, b2: usize) -> Result<Self> {
        if b1 * b2 != shape.n() {
            return Err(Error::Layout(format!(
                "block sizes ({b1},{b2}) do not multiply to N = {}",
                shape.n()
            )));
        }
        Ok(Self {
            shape,
            b1,
            b2,
            grouping: Grouping::Flat,
        })
    }

    /// The `(f·h, w)` configuration.
    pub fn fh_w(shape: VideoShape) -> Self {
        Self::aligned(shape, &[Axis::F, Axis::H], &[Axis::W]).expect("static grouping")
    }

    /// The dense-degenerate `(N, 1)` configuration.
    pub fn dense(shape: VideoShape) -> Self {
        Self::flat(shape, shape.n(), 1).expect("N x 1 always covers N")
    }

    /// Parses `"fh|w"`-style axis groupings or `"flat:9x2"`.
    pub fn parse(shape: VideoShape, s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("flat:") {
            let (a, b) = rest
                .split_once('x')
                .ok_or_else(|| Error::Invalid(format!("bad flat config {s:?}")))?;
            let b1 = a.trim().parse().map_err(|_| Error::Invalid(format!("bad b1 in {s:?}")))?;
            let b2 = b.trim().parse().map_err(|_| Error::Invalid(format!("bad b2 in {s:?}")))?;
            return Self::flat(shape, b1, b2);
        }
        let (a, b) = s
            .split_once('|')
            .ok_or_else(|| Error::Invalid(format!("block config {s:?} is neither 'ab|c' nor 'flat:AxB'")))?;
        let parse_group = |g: &str| -> Result<Vec<Axis>> {
            g.trim()
                .chars()
                .map(|c| Axis::from_letter(c).ok_or_else(|| Error::Invalid(format!("unknown axis {c:?} in {s:?}"))))
                .collect()
        };
        Self::aligned(shape, &parse_group(a)?, &parse_group(b)?)
    }

    pub fn shape(&self) -> VideoShape {
        self.shape
    }

    pub fn b1(&self) -> usize {
        self.b1
    }

    pub fn b2(&self) -> usize {
        self.b2
    }

    pub fn sizes(&self) -> BlockSizes {
        BlockSizes::new(self.b1, self.b2).expect("config sizes are positive")
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    pub fn is_dense(&self) -> bool {
        self.b1 == 1 || self.b2 == 1
    }

    /// Every axis lies wholly inside one block slot. Flat configs qualify
    /// only when `b2` is a suffix product of the grid (`1`, `w`, `h·w`, `N`).
    pub fn is_aligned(&self) -> bool {
        match self.grouping {
            Grouping::Aligned { .. } => true,
            Grouping::Flat => {
                let s = self.shape;
                [1, s.w, s.h * s.w, s.n()].contains(&self.b2)
            }
        }
    }

    /// Human-readable label, e.g. `fh|w` or `flat:9x2`.
    pub fn descriptor(&self) -> String {
        match &self.grouping {
            Grouping::Aligned { major, minor } => {
                let g = |v: &[Axis]| v.iter().map(|a| a.letter()).collect::<String>();
                format!("{}|{}", g(major), g(minor))
            }
            Grouping::Flat => format!("flat:{}x{}", self.b1, self.b2),
        }
    }

    /// The order in which the Monarch blocking `(ℓ·b2 + j)` applies.
    pub fn monarch_ordering(&self) -> TokenOrdering {
        match &self.grouping {
            Grouping::Aligned { major, minor } => {
                TokenOrdering::grouped(self.shape, major, minor).expect("validated grouping")
            }
            Grouping::Flat => TokenOrdering::row_major(self.shape),
        }
    }

    /// The transposed order `(j·b1 + ℓ)`; for `fh|w` this is `ρ`.
    pub fn rho_ordering(&self) -> TokenOrdering {
        match &self.grouping {
            Grouping::Aligned { major, minor } => {
                TokenOrdering::grouped(self.shape, minor, major).expect("validated grouping")
            }
            Grouping::Flat => TokenOrdering::new(
                self.shape,
                OrderingKind::BlockTransposed {
                    b1: self.b1,
                    b2: self.b2,
                },
            )
            .expect("sizes cover N"),
        }
    }

    pub fn layout(&self) -> LayoutPlan {
        LayoutPlan::new(self.monarch_ordering())
    }

    /// Grouping with unit axes dropped; equal keys mean identical blockings.
    fn dedup_key(&self) -> (usize, usize, Vec<Axis>, Vec<Axis>) {
        match &self.grouping {
            Grouping::Aligned { major, minor } => {
                let keep = |v: &[Axis]| -> Vec<Axis> {
                    v.iter().copied().filter(|&a| self.shape.len(a) > 1).collect()
                };
                (self.b1, self.b2, keep(major), keep(minor))
            }
            Grouping::Flat => (self.b1, self.b2, vec![], vec![]),
        }
    }
}

impl fmt::Display for BlockConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}x{})", self.descriptor(), self.b1, self.b2)
    }
}

/// The six aligned configurations `(fh,w), (w,fh), (f,hw), (hw,f), (fw,h),
/// (h,fw)`, minus dense-degenerate ones and duplicates created by unit axes.
pub fn enumerate_aligned_configs(shape: VideoShape) -> Vec<BlockConfig> {
    use Axis::*;
    let groupings: [(&[Axis], &[Axis]); 6] = [
        (&[F, H], &[W]),
        (&[W], &[F, H]),
        (&[F], &[H, W]),
        (&[H, W], &[F]),
        (&[F, W], &[H]),
        (&[H], &[F, W]),
    ];
    let mut out: Vec<BlockConfig> = Vec::new();
    for (major, minor) in groupings {
        let cfg = BlockConfig::aligned(shape, major, minor).expect("static grouping");
        if cfg.is_dense() {
            continue;
        }
        if out.iter().any(|c| c.dedup_key() == cfg.dedup_key()) {
            continue;
        }
        out.push(cfg);
    }
    out
}

/// Tiling of a base configuration into `c1 × c2` sub-blocks per Monarch
/// block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TilePlan {
    config: BlockConfig,
    c1: usize,
    c2: usize,
    neighborhoods: Option<(usize, usize, usize)>,
}

impl TilePlan {
    pub fn new(config: BlockConfig, c1: usize, c2: usize) -> Result<Self> {
        if c1 == 0 || !config.b1.is_multiple_of(c1) {
            return Err(Error::Layout(format!("c1 = {c1} does not divide b1 = {}", config.b1)));
        }
        if c2 == 0 || !config.b2.is_multiple_of(c2) {
            return Err(Error::Layout(format!("c2 = {c2} does not divide b2 = {}", config.b2)));
        }
        Ok(Self {
            config,
            c1,
            c2,
            neighborhoods: None,
        })
    }

    pub fn untiled(config: BlockConfig) -> Self {
        Self::new(config, 1, 1).expect("1 divides everything")
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    pub fn c1(&self) -> usize {
        self.c1
    }

    pub fn c2(&self) -> usize {
        self.c2
    }

    pub fn neighborhoods(&self) -> Option<(usize, usize, usize)> {
        self.neighborhoods
    }

    pub fn dims(&self) -> TileDims {
        TileDims::new(self.config.b1, self.config.b2, self.c1, self.c2).expect("validated plan")
    }

    pub fn is_tiled(&self) -> bool {
        self.c1 > 1 || self.c2 > 1
    }

    pub fn descriptor(&self) -> String {
        let mut s = format!("{} c={}x{}", self.config, self.c1, self.c2);
        if let Some((nf, nh, nw)) = self.neighborhoods {
            s.push_str(&format!(" n={nf}x{nh}x{nw}"));
        }
        s
    }

    /// Token order for the tiled blocking. With neighborhoods, the `f·h`
    /// slot is ordered neighborhood-major so that each row tile covers one
    /// `n_f × n_h` neighborhood; this coincides with row-major whenever
    /// `n_f = 1` or `n_h = h`.
    pub fn monarch_ordering(&self) -> TokenOrdering {
        let Some((nf, nh, _)) = self.neighborhoods else {
            return self.config.monarch_ordering();
        };
        let s = self.config.shape;
        let digits = vec![
            Digit { axis: Axis::F, stride: nf, size: s.f / nf },
            Digit { axis: Axis::H, stride: nh, size: s.h / nh },
            Digit { axis: Axis::F, stride: 1, size: nf },
            Digit { axis: Axis::H, stride: 1, size: nh },
            Digit::whole(Axis::W, &s),
        ];
        TokenOrdering::new(s, OrderingKind::Generalized(digits)).expect("divisibility checked")
    }

    pub fn layout(&self) -> LayoutPlan {
        LayoutPlan::new(self.monarch_ordering())
    }
}

/// Tile plan from neighborhood sizes on an `(f·h, w)` base:
/// `c1 = (f/n_f)·(h/n_h)`, `c2 = w/n_w`.
pub fn make_tile_plan(
    shape: VideoShape,
    config: &BlockConfig,
    (nf, nh, nw): (usize, usize, usize),
) -> Result<TilePlan> {
    if config.shape != shape {
        return Err(Error::Shape(format!("config over {} used with {shape}", config.shape)));
    }
    if config.b1 != shape.f * shape.h || config.b2 != shape.w || !config.is_aligned() {
        return Err(Error::Layout(format!(
            "tile plans need an (fh, w) base, got {config}"
        )));
    }
    for (name, n, len) in [("n_f", nf, shape.f), ("n_h", nh, shape.h), ("n_w", nw, shape.w)] {
        if n == 0 || len % n != 0 {
            return Err(Error::Layout(format!("{name} = {n} does not divide {len}")));
        }
    }
    let c1 = (shape.f / nf) * (shape.h / nh);
    let c2 = shape.w / nw;
    let mut plan = TilePlan::new(config.clone(), c1, c2)?;
    plan.neighborhoods = Some((nf, nh, nw));
    Ok(plan)
}

/// Every divisor triple `(n_f, n_h, n_w)` of the grid.
pub fn neighborhood_candidates(shape: VideoShape) -> Vec<(usize, usize, usize)> {
    let divisors = |n: usize| (1..=n).filter(move |d| n.is_multiple_of(*d));
    let mut out = Vec::new();
    for nf in divisors(shape.f) {
        for nh in divisors(shape.h) {
            for nw in divisors(shape.w) {
                out.push((nf, nh, nw));
            }
        }
    }
    out
}

/// Row-major order plus the permutation into a Monarch token order.
#[derive(Clone, Debug)]
pub struct LayoutPlan {
    ordering: TokenOrdering,
    to_monarch: LayoutPermutation,
}

impl LayoutPlan {
    pub fn new(ordering: TokenOrdering) -> Self {
        let phi = TokenOrdering::row_major(ordering.shape());
        let to_monarch = build_permutation(&phi, &ordering).expect("same shape");
        Self {
            ordering,
            to_monarch,
        }
    }

    pub fn shape(&self) -> VideoShape {
        self.ordering.shape()
    }

    pub fn ordering(&self) -> &TokenOrdering {
        &self.ordering
    }

    pub fn permutation(&self) -> &LayoutPermutation {
        &self.to_monarch
    }

    /// Re-orders row-major token rows (e.g. Q, K, V) into Monarch order.
    pub fn rows_to_monarch(&self, m: &DenseMatrix) -> DenseMatrix {
        if self.to_monarch.is_identity() {
            return m.clone();
        }
        self.to_monarch.permute_rows(m)
    }

    pub fn rows_from_monarch(&self, m: &DenseMatrix) -> DenseMatrix {
        if self.to_monarch.is_identity() {
            return m.clone();
        }
        self.to_monarch.unpermute_rows(m)
    }

    /// Re-orders both axes of a token × token matrix into Monarch order.
    pub fn matrix_to_monarch(&self, m: &DenseMatrix) -> DenseMatrix {
        if self.to_monarch.is_identity() {
            return m.clone();
        }
        self.to_monarch.conjugate(m)
    }

    pub fn matrix_from_monarch(&self, m: &DenseMatrix) -> DenseMatrix {
        if self.to_monarch.is_identity() {
            return m.clone();
        }
        self.to_monarch.unconjugate(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(f: usize, h: usize, w: usize) -> VideoShape {
        VideoShape::new(f, h, w).unwrap()
    }

    #[test]
    fn flatten_examples() {
        let s = shape(2, 3, 3);
        let phi = TokenOrdering::row_major(s);
        let rho = TokenOrdering::width_noncontiguous(s);
        assert_eq!(phi.flatten_index((0, 0, 0)).unwrap(), 0);
        assert_eq!(phi.flatten_index((1, 2, 2)).unwrap(), 17);
        assert_eq!(rho.flatten_index((0, 0, 1)).unwrap(), 6);
        assert!(phi.flatten_index((2, 0, 0)).is_err());
    }

    #[test]
    fn grouped_orderings_reproduce_phi_and_rho() {
        let s = shape(2, 3, 4);
        let phi = TokenOrdering::row_major(s);
        let rho = TokenOrdering::width_noncontiguous(s);
        let cfg = BlockConfig::fh_w(s);
        for p in s.positions() {
            assert_eq!(cfg.monarch_ordering().index_of(p), phi.index_of(p));
            assert_eq!(cfg.rho_ordering().index_of(p), rho.index_of(p));
        }
    }

    #[test]
    fn every_ordering_is_a_bijection() {
        for (f, h, w) in [(1, 1, 1), (2, 3, 3), (3, 4, 4), (2, 2, 6), (4, 1, 5)] {
            let s = shape(f, h, w);
            let mut orderings = vec![TokenOrdering::row_major(s), TokenOrdering::width_noncontiguous(s)];
            for c in enumerate_aligned_configs(s) {
                orderings.push(c.monarch_ordering());
                orderings.push(c.rho_ordering());
            }
            for (nf, nh, nw) in neighborhood_candidates(s) {
                let plan = make_tile_plan(s, &BlockConfig::fh_w(s), (nf, nh, nw)).unwrap();
                orderings.push(plan.monarch_ordering());
            }
            for o in orderings {
                let mut seen = vec![false; s.n()];
                for p in s.positions() {
                    let i = o.flatten_index(p).unwrap();
                    assert!(!seen[i], "{o:?} repeats {i}");
                    seen[i] = true;
                }
            }
        }
    }

    #[test]
    fn rejects_bad_digits() {
        let s = shape(2, 4, 3);
        let bad = vec![
            Digit { axis: Axis::H, stride: 1, size: 2 },
            Digit::whole(Axis::F, &s),
            Digit::whole(Axis::W, &s),
        ];
        assert!(TokenOrdering::new(s, OrderingKind::Generalized(bad)).is_err());
    }

    #[test]
    fn permutation_identity_and_transpose() {
        let s = shape(2, 3, 3);
        let phi = TokenOrdering::row_major(s);
        assert!(build_permutation(&phi, &phi).unwrap().is_identity());
        let line = shape(1, 1, 7);
        let p = build_permutation(
            &TokenOrdering::width_noncontiguous(line),
            &TokenOrdering::row_major(line),
        )
        .unwrap();
        assert!(p.is_identity());

        let p = build_permutation(&TokenOrdering::width_noncontiguous(s), &phi).unwrap();
        let m = p.to_matrix();
        let ppt = m.matmul(&m.transpose()).unwrap();
        assert_eq!(ppt, DenseMatrix::identity(s.n()));
        for row in 0..s.n() {
            assert_eq!(m.row(row).iter().filter(|x| **x == 1.0).count(), 1);
        }
    }

    #[test]
    fn permute_rows_matches_matrix_product() {
        let s = shape(2, 2, 3);
        let p = build_permutation(&TokenOrdering::row_major(s), &TokenOrdering::width_noncontiguous(s))
            .unwrap();
        let m = DenseMatrix::from_fn(12, 12, |r, c| (r * 31 + c * 7) as f64);
        let pm = p.to_matrix();
        assert_eq!(p.permute_rows(&m), pm.matmul(&m).unwrap());
        assert_eq!(p.unpermute_rows(&m), pm.transpose().matmul(&m).unwrap());
        let conj = pm.matmul(&m).unwrap().matmul(&pm.transpose()).unwrap();
        assert_eq!(p.conjugate(&m), conj);
        assert_eq!(p.unconjugate(&p.conjugate(&m)), m);
    }

    #[test]
    fn six_aligned_configs() {
        let s = shape(2, 3, 3);
        let configs = enumerate_aligned_configs(s);
        let sizes: Vec<(usize, usize)> = configs.iter().map(|c| (c.b1(), c.b2())).collect();
        assert_eq!(sizes, vec![(6, 3), (3, 6), (2, 9), (9, 2), (6, 3), (3, 6)]);
        let descs: Vec<String> = configs.iter().map(|c| c.descriptor()).collect();
        assert_eq!(descs, ["fh|w", "w|fh", "f|hw", "hw|f", "fw|h", "h|fw"]);
        assert!(configs.iter().all(BlockConfig::is_aligned));
        assert_eq!(enumerate_aligned_configs(shape(3, 4, 5)).len(), 6);
        assert_eq!(enumerate_aligned_configs(shape(2, 2, 2)).len(), 6);
    }

    #[test]
    fn degenerate_shapes_collapse() {
        assert!(enumerate_aligned_configs(shape(1, 1, 1)).is_empty());
        assert!(enumerate_aligned_configs(shape(1, 1, 9)).is_empty());
        let c = enumerate_aligned_configs(shape(1, 3, 4));
        let descs: Vec<String> = c.iter().map(|c| c.descriptor()).collect();
        assert_eq!(descs, ["fh|w", "w|fh"]);
    }

    #[test]
    fn flat_alignment() {
        let s = shape(2, 3, 3);
        assert!(!BlockConfig::flat(s, 9, 2).unwrap().is_aligned());
        assert!(!BlockConfig::flat(s, 3, 6).unwrap().is_aligned());
        assert!(BlockConfig::flat(s, 6, 3).unwrap().is_aligned());
        assert!(BlockConfig::flat(s, 2, 9).unwrap().is_aligned());
        assert!(BlockConfig::dense(s).is_aligned());
        assert!(BlockConfig::flat(s, 4, 4).is_err());
    }

    #[test]
    fn parse_configs() {
        let s = shape(2, 3, 3);
        assert_eq!(BlockConfig::parse(s, "fh|w").unwrap(), BlockConfig::fh_w(s));
        assert_eq!(BlockConfig::parse(s, "flat:9x2").unwrap(), BlockConfig::flat(s, 9, 2).unwrap());
        assert!(BlockConfig::parse(s, "fh|h").is_err());
        assert!(BlockConfig::parse(s, "nonsense").is_err());
    }

    #[test]
    fn tile_plan_examples() {
        let s = shape(2, 3, 3);
        let base = BlockConfig::fh_w(s);
        let p = make_tile_plan(s, &base, (2, 3, 3)).unwrap();
        assert_eq!((p.c1(), p.c2()), (1, 1));
        let p = make_tile_plan(s, &base, (1, 3, 3)).unwrap();
        assert_eq!((p.c1(), p.c2()), (2, 1));
        let p = make_tile_plan(s, &base, (1, 1, 1)).unwrap();
        let d = p.dims();
        assert_eq!((d.tile_b1(), d.tile_b2()), (1, 1));
        assert!(make_tile_plan(s, &base, (2, 2, 3)).is_err());
        assert!(make_tile_plan(s, &BlockConfig::parse(s, "w|fh").unwrap(), (1, 1, 1)).is_err());
    }

    #[test]
    fn sparsity_config_pair_block_sizes() {
        // tile block sizes (n_f·n_h, n_w): (h, w) for n_f = 1 and (3h, w) for n_f = 3
        let s = shape(6, 4, 5);
        let base = BlockConfig::fh_w(s);
        for (nf, want) in [(1, (4, 5)), (3, (12, 5))] {
            let d = make_tile_plan(s, &base, (nf, 4, 5)).unwrap().dims();
            assert_eq!((d.tile_b1(), d.tile_b2()), want);
        }
    }

    #[test]
    fn neighborhood_ordering_matches_phi_when_frames_are_whole() {
        let s = shape(4, 6, 8);
        let base = BlockConfig::fh_w(s);
        for nh in [1, 2, 3, 6] {
            let plan = make_tile_plan(s, &base, (1, nh, 4)).unwrap();
            assert!(plan.layout().permutation().is_identity());
        }
        let plan = make_tile_plan(s, &base, (2, 3, 8)).unwrap();
        assert!(!plan.layout().permutation().is_identity());
    }

    #[test]
    fn tile_plan_divisibility() {
        let s = shape(2, 3, 3);
        assert!(TilePlan::new(BlockConfig::fh_w(s), 4, 1).is_err());
        assert!(TilePlan::new(BlockConfig::fh_w(s), 3, 3).is_ok());
    }
}
