//! Singular value decompositions for small dense blocks.
//!
//! [`jacobi_svd`] is a one-sided (Hestenes) Jacobi decomposition and is the
//! exact path used for verification and for the low-rank baseline.
//! [`top_singular_triplet`] is power iteration on the smaller Gram matrix and
//! backs the per-slice rank-1 projections; it falls back to Jacobi when it
//! fails to converge (nearly tied leading singular values).

use crate::error::{out_of_range, Result};
use crate::tensor::{dot, DenseMatrix};

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 500;

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD truncated to `rank` triplets. `u` is `rows × rank`, `v` is
/// `cols × rank`, singular values are non-increasing.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U · diag(σ) · Vᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let (rows, cols) = (self.u.rows(), self.v.rows());
        let mut out = DenseMatrix::zeros(rows, cols);
        for (t, &s) in self.singular_values.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for r in 0..rows {
                let us = self.u[(r, t)] * s;
                if us == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    out[(r, c)] += us * self.v[(c, t)];
                }
            }
        }
        out
    }
}

/// Top-`rank` singular triplets of `m`.
pub fn truncated_svd(m: &DenseMatrix, rank: usize) -> Result<SvdResult> {
    let max_rank = m.rows().min(m.cols());
    if rank > max_rank {
        return Err(out_of_range("rank", rank, format!("0..={max_rank}")));
    }
    let full = jacobi_svd(m);
    Ok(SvdResult {
        singular_values: full.singular_values[..rank].to_vec(),
        u: take_columns(&full.u, rank),
        v: take_columns(&full.v, rank),
    })
}

fn take_columns(m: &DenseMatrix, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), n, |r, c| m[(r, c)])
}

/// Full thin SVD by one-sided Jacobi rotations.
pub fn jacobi_svd(m: &DenseMatrix) -> SvdResult {
    if m.rows() < m.cols() {
        let t = jacobi_svd(&m.transpose());
        return SvdResult {
            singular_values: t.singular_values,
            u: t.v,
            v: t.u,
        };
    }
    let (rows, n) = m.shape();
    // Work on columns: store column-major for contiguous access.
    let mut a: Vec<Vec<f64>> = (0..n).map(|c| (0..rows).map(|r| m[(r, c)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a.iter().map(|col| dot(col, col).sqrt()).zip(0..n).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut sigma = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let scale = order.first().map_or(0.0, |o| o.0);
    for &(s, idx) in &order {
        let mut vc = v[idx].clone();
        let mut uc: Vec<f64> = if s > scale * 1e-300 && s > 0.0 {
            a[idx].iter().map(|x| x / s).collect()
        } else {
            vec![0.0; rows]
        };
        if flip_needed(&vc) {
            vc.iter_mut().for_each(|x| *x = -*x);
            uc.iter_mut().for_each(|x| *x = -*x);
        }
        sigma.push(s);
        u_cols.push(uc);
        v_cols.push(vc);
    }
    complete_orthonormal(&mut u_cols, rows);

    SvdResult {
        singular_values: sigma,
        u: DenseMatrix::from_fn(rows, n, |r, c| u_cols[c][r]),
        v: DenseMatrix::from_fn(n, n, |r, c| v_cols[c][r]),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Sign convention: the first nonzero component of a right vector is
/// non-negative.
fn flip_needed(v: &[f64]) -> bool {
    v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
}

/// Replaces zero columns (from zero singular values) with unit vectors
/// orthogonal to the rest, via Gram-Schmidt against the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], dim: usize) {
    let mut candidate = 0;
    for c in 0..cols.len() {
        if dot(&cols[c], &cols[c]) > 0.5 {
            continue;
        }
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for other in cols.iter() {
                if dot(other, other) > 0.5 {
                    let proj = dot(other, &e);
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                cols[c] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

/// Leading singular triplet `(σ, u, v)` with `‖u‖ = ‖v‖ = 1`.
///
/// Zero matrices return `σ = 0` and zero vectors.
pub fn top_singular_triplet(m: &DenseMatrix) -> (f64, Vec<f64>, Vec<f64>) {
    let (rows, cols) = m.shape();
    if m.data().iter().all(|x| *x == 0.0) {
        return (0.0, vec![0.0; rows], vec![0.0; cols]);
    }
    let triplet = if cols <= rows {
        power_right(m)
    } else {
        power_right(&m.transpose()).map(|(s, u, v)| (s, v, u))
    };
    let (s, u, mut v) = match triplet {
        Some(t) => t,
        None => {
            let full = jacobi_svd(m);
            let u = (0..rows).map(|r| full.u[(r, 0)]).collect();
            let v = (0..cols).map(|c| full.v[(c, 0)]).collect();
            (full.singular_values[0], u, v)
        }
    };
    let mut u = u;
    if flip_needed(&v) {
        v.iter_mut().for_each(|x| *x = -*x);
        u.iter_mut().for_each(|x| *x = -*x);
    }
    (s, u, v)
}

/// Power iteration on `mᵀm` for a tall-or-square `m`. `None` when the
/// iteration does not converge.
fn power_right(m: &DenseMatrix) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let (rows, cols) = m.shape();
    let mut gram = vec![0.0; cols * cols];
    for r in 0..rows {
        let row = m.row(r);
        for a in 0..cols {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..cols {
                gram[a * cols + b] += row[a] * row[b];
            }
        }
    }

    // Start from the largest row, then fold in the other rows with signs
    // aligned to it so the start is not orthogonal to the top direction.
    let pivot = (0..rows)
        .max_by(|&a, &b| {
            let na = dot(m.row(a), m.row(a));
            let nb = dot(m.row(b), m.row(b));
            na.total_cmp(&nb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let mut v = vec![0.0; cols];
    for r in 0..rows {
        let s = dot(m.row(r), m.row(pivot));
        let sign = if s < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().zip(m.row(r)).for_each(|(x, y)| *x += sign * y);
    }
    if !normalize(&mut v) {
        v = m.row(pivot).to_vec();
        normalize(&mut v);
    }

    let mut next = vec![0.0; cols];
    let mut converged = false;
    for _ in 0..POWER_MAX_ITERS {
        for a in 0..cols {
            next[a] = dot(&gram[a * cols..(a + 1) * cols], &v);
        }
        if !normalize(&mut next) {
            return None;
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if delta <= POWER_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let mut u: Vec<f64> = (0..rows).map(|r| dot(m.row(r), &v)).collect();
    let sigma = dot(&u, &u).sqrt();
    if sigma == 0.0 {
        return None;
    }
    u.iter_mut().for_each(|x| *x /= sigma);
    Some((sigma, u, v))
}

fn normalize(x: &mut [f64]) -> bool {
    let n = dot(x, x).sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|y| *y /= n);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_spectrum() {
        let s = truncated_svd(&DenseMatrix::identity(2), 1).unwrap();
        assert!((s.singular_values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_input_has_zero_residual() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 0.0, -1.0];
        let m = DenseMatrix::from_fn(3, 4, |r, c| u[r] * v[c]);
        let s = truncated_svd(&m, 1).unwrap();
        assert!(s.reconstruct().max_abs_diff(&m).unwrap() < 1e-13);
        let (sigma, uu, vv) = top_singular_triplet(&m);
        let rebuilt = DenseMatrix::from_fn(3, 4, |r, c| sigma * uu[r] * vv[c]);
        assert!(rebuilt.max_abs_diff(&m).unwrap() < 1e-13);
    }

    #[test]
    fn rank_out_of_range() {
        assert!(truncated_svd(&random(5, 3, 0), 4).is_err());
    }

    #[test]
    fn full_rank_reconstructs() {
        for (r, c, seed) in [(5, 3, 1), (3, 5, 2), (7, 7, 3), (1, 4, 4)] {
            let m = random(r, c, seed);
            let s = truncated_svd(&m, r.min(c)).unwrap();
            let err = s.reconstruct().sub(&m).unwrap().frobenius_norm_sq().sqrt();
            assert!(err <= 1e-9 * m.frobenius_norm_sq().sqrt());
        }
    }

    #[test]
    fn vectors_orthonormal_and_sorted() {
        let m = random(6, 4, 9);
        let s = jacobi_svd(&m);
        for w in s.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for a in 0..4 {
            for b in 0..4 {
                let uu: f64 = (0..6).map(|r| s.u[(r, a)] * s.u[(r, b)]).sum();
                let vv: f64 = (0..4).map(|r| s.v[(r, a)] * s.v[(r, b)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((uu - want).abs() < 1e-10);
                assert!((vv - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        let m = DenseMatrix::from_fn(4, 3, |r, _| r as f64);
        let s = jacobi_svd(&m);
        assert!(s.singular_values[1] < 1e-12);
        for a in 0..3 {
            for b in 0..3 {
                let uu: f64 = (0..4).map(|r| s.u[(r, a)] * s.u[(r, b)]).sum();
                assert!((uu - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn power_matches_jacobi_on_random_blocks() {
        for seed in 0..30 {
            let m = random(2 + seed as usize % 5, 1 + seed as usize % 6, seed);
            let (s, _, v) = top_singular_triplet(&m);
            let full = jacobi_svd(&m);
            assert!((s - full.singular_values[0]).abs() < 1e-10);
            let align: f64 = (0..m.cols()).map(|c| v[c] * full.v[(c, 0)]).sum();
            if full.singular_values.len() < 2
                || full.singular_values[0] - full.singular_values[1] > 1e-3
            {
                assert!((align.abs() - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_block_projects_to_zero() {
        let (s, u, v) = top_singular_triplet(&DenseMatrix::zeros(3, 2));
        assert_eq!(s, 0.0);
        assert!(u.iter().chain(&v).all(|x| *x == 0.0));
    }

    #[test]
    fn sign_convention() {
        let m = DenseMatrix::from_rows(&[vec![0.0, -2.0], vec![0.0, -1.0]]).unwrap();
        let (_, _, v) = top_singular_triplet(&m);
        assert!(v[1] > 0.0);
    }
}
