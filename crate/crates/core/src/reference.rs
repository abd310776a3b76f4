//! Straight nested-loop transcriptions of the solver updates and of the
//! factor formulas. Slow and allocation-heavy on purpose; these exist only
//! to cross-check the production paths.
//!
//! All inputs are in Monarch token order and `q` is already scaled.

use crate::monarch::TileDims;
use crate::tensor::{DenseMatrix, Tensor};

/// Untiled solver: returns `(L, R)` with shapes `b2×b1×b1`, `b1×b2×b2`.
pub fn solve(
    q: &DenseMatrix,
    k: &DenseMatrix,
    b1: usize,
    b2: usize,
    iterations: usize,
    eps_div: f64,
    eps_log: f64,
) -> (Tensor, Tensor) {
    let d = q.cols();
    let qa = |ell: usize, j: usize, v: usize| q[(ell * b2 + j, v)];
    let ka = |kk: usize, i: usize, v: usize| k[(kk * b2 + i, v)];
    let mut l = Tensor::zeros(&[b2, b1, b1]);
    for j in 0..b2 {
        for ell in 0..b1 {
            l.set(&[j, ell, ell], 1.0);
        }
    }
    let mut r = Tensor::zeros(&[b1, b2, b2]);
    for _ in 0..iterations {
        for kk in 0..b1 {
            for j in 0..b2 {
                let mut c_r = 0.0;
                for ell in 0..b1 {
                    c_r += l.at(&[j, ell, kk]);
                }
                let mut z = vec![0.0; b2];
                for (i, zi) in z.iter_mut().enumerate() {
                    let mut beta = 0.0;
                    for v in 0..d {
                        let mut alpha = 0.0;
                        for ell in 0..b1 {
                            alpha += l.at(&[j, ell, kk]) * qa(ell, j, v);
                        }
                        beta += alpha * ka(kk, i, v);
                    }
                    *zi = beta / f64::max(c_r, eps_div);
                }
                let p = naive_softmax(&z);
                for i in 0..b2 {
                    r.set(&[kk, j, i], p[i]);
                }
            }
        }
        for j in 0..b2 {
            for ell in 0..b1 {
                let mut z = vec![0.0; b1];
                for (kk, zk) in z.iter_mut().enumerate() {
                    let mut c_l = 0.0;
                    for i in 0..b2 {
                        let x = r.at(&[kk, j, i]);
                        c_l += x * f64::max(x, eps_log).ln();
                    }
                    let mut beta = 0.0;
                    for v in 0..d {
                        let mut alpha = 0.0;
                        for i in 0..b2 {
                            alpha += r.at(&[kk, j, i]) * ka(kk, i, v);
                        }
                        beta += alpha * qa(ell, j, v);
                    }
                    *zk = beta - c_l;
                }
                let p = naive_softmax(&z);
                for kk in 0..b1 {
                    l.set(&[j, ell, kk], p[kk]);
                }
            }
        }
    }
    (l, r)
}

/// Tiled solver: returns `(L′, R′)` with the 7-axis tiled shapes.
pub fn solve_tiled(
    q: &DenseMatrix,
    k: &DenseMatrix,
    dims: TileDims,
    iterations: usize,
    eps_div: f64,
    eps_log: f64,
) -> (Tensor, Tensor) {
    let (c1, c2, t1, t2) = (dims.c1, dims.c2, dims.tile_b1(), dims.tile_b2());
    let b2 = dims.b2;
    let d = q.cols();
    // Q[ℓ₁,ℓ₂,j₁,j₂,v] and K[k₁,k₂,i₁,i₂,v]
    let qa = |l1: usize, l2: usize, j1: usize, j2: usize, v: usize| {
        q[((l1 * t1 + l2) * b2 + j1 * t2 + j2, v)]
    };
    let ka = |k1: usize, k2: usize, i1: usize, i2: usize, v: usize| {
        k[((k1 * t1 + k2) * b2 + i1 * t2 + i2, v)]
    };
    let mut l = Tensor::zeros(&dims.l_shape());
    for l1 in 0..c1 {
        for j1 in 0..c2 {
            for k1 in 0..c1 {
                for i1 in 0..c2 {
                    for j2 in 0..t2 {
                        for l2 in 0..t1 {
                            l.set(&[l1, j1, k1, i1, j2, l2, l2], 1.0);
                        }
                    }
                }
            }
        }
    }
    let mut r = Tensor::zeros(&dims.r_shape());
    for _ in 0..iterations {
        for l1 in 0..c1 {
            for j1 in 0..c2 {
                for k1 in 0..c1 {
                    for i1 in 0..c2 {
                        for k2 in 0..t1 {
                            for j2 in 0..t2 {
                                let mut c_r = 0.0;
                                for l2 in 0..t1 {
                                    c_r += l.at(&[l1, j1, k1, i1, j2, l2, k2]);
                                }
                                let mut z = vec![0.0; t2];
                                for (i2, zi) in z.iter_mut().enumerate() {
                                    let mut beta = 0.0;
                                    for v in 0..d {
                                        let mut alpha = 0.0;
                                        for l2 in 0..t1 {
                                            alpha += l.at(&[l1, j1, k1, i1, j2, l2, k2])
                                                * qa(l1, l2, j1, j2, v);
                                        }
                                        beta += alpha * ka(k1, k2, i1, i2, v);
                                    }
                                    *zi = beta / f64::max(c_r, eps_div);
                                }
                                let p = naive_softmax(&z);
                                for i2 in 0..t2 {
                                    r.set(&[l1, j1, k1, i1, k2, j2, i2], p[i2]);
                                }
                            }
                        }
                    }
                }
            }
        }
        for l1 in 0..c1 {
            for j1 in 0..c2 {
                for j2 in 0..t2 {
                    for l2 in 0..t1 {
                        // jointly over (k₁, i₁, k₂)
                        let mut z = Vec::with_capacity(c1 * c2 * t1);
                        for k1 in 0..c1 {
                            for i1 in 0..c2 {
                                for k2 in 0..t1 {
                                    let mut c_l = 0.0;
                                    for i2 in 0..t2 {
                                        let x = r.at(&[l1, j1, k1, i1, k2, j2, i2]);
                                        c_l += x * f64::max(x, eps_log).ln();
                                    }
                                    let mut beta = 0.0;
                                    for v in 0..d {
                                        let mut alpha = 0.0;
                                        for i2 in 0..t2 {
                                            alpha += r.at(&[l1, j1, k1, i1, k2, j2, i2])
                                                * ka(k1, k2, i1, i2, v);
                                        }
                                        beta += alpha * qa(l1, l2, j1, j2, v);
                                    }
                                    z.push(beta - c_l);
                                }
                            }
                        }
                        let p = naive_softmax(&z);
                        let mut it = p.into_iter();
                        for k1 in 0..c1 {
                            for i1 in 0..c2 {
                                for k2 in 0..t1 {
                                    l.set(&[l1, j1, k1, i1, j2, l2, k2], it.next().unwrap());
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (l, r)
}

/// `O = M·V` from the untiled output equations.
pub fn output(l: &Tensor, r: &Tensor, v: &DenseMatrix, b1: usize, b2: usize) -> DenseMatrix {
    let d = v.cols();
    let mut o = DenseMatrix::zeros(b1 * b2, d);
    for ell in 0..b1 {
        for j in 0..b2 {
            for vv in 0..d {
                let mut acc = 0.0;
                for kk in 0..b1 {
                    let mut y = 0.0;
                    for i in 0..b2 {
                        y += r.at(&[kk, j, i]) * v[(kk * b2 + i, vv)];
                    }
                    acc += l.at(&[j, ell, kk]) * y;
                }
                o[(ell * b2 + j, vv)] = acc;
            }
        }
    }
    o
}

/// `O = M·V` from the tiled output equations.
pub fn output_tiled(l: &Tensor, r: &Tensor, v: &DenseMatrix, dims: TileDims) -> DenseMatrix {
    let (c1, c2, t1, t2) = (dims.c1, dims.c2, dims.tile_b1(), dims.tile_b2());
    let b2 = dims.b2;
    let d = v.cols();
    let mut o = DenseMatrix::zeros(dims.n(), d);
    for l1 in 0..c1 {
        for l2 in 0..t1 {
            for j1 in 0..c2 {
                for j2 in 0..t2 {
                    for vv in 0..d {
                        let mut acc = 0.0;
                        for k1 in 0..c1 {
                            for k2 in 0..t1 {
                                for i1 in 0..c2 {
                                    let mut y = 0.0;
                                    for i2 in 0..t2 {
                                        y += r.at(&[l1, j1, k1, i1, k2, j2, i2])
                                            * v[((k1 * t1 + k2) * b2 + i1 * t2 + i2, vv)];
                                    }
                                    acc += l.at(&[l1, j1, k1, i1, j2, l2, k2]) * y;
                                }
                            }
                        }
                        o[((l1 * t1 + l2) * b2 + j1 * t2 + j2, vv)] = acc;
                    }
                }
            }
        }
    }
    o
}

/// Dense matrix from the 4-index entry formula.
pub fn densify(l: &Tensor, r: &Tensor, b1: usize, b2: usize) -> DenseMatrix {
    let n = b1 * b2;
    let mut m = DenseMatrix::zeros(n, n);
    for ell in 0..b1 {
        for j in 0..b2 {
            for kk in 0..b1 {
                for i in 0..b2 {
                    m[(ell * b2 + j, kk * b2 + i)] = l.at(&[j, ell, kk]) * r.at(&[kk, j, i]);
                }
            }
        }
    }
    m
}

/// Dense matrix from the 8-index tiled entry formula.
pub fn densify_tiled(l: &Tensor, r: &Tensor, dims: TileDims) -> DenseMatrix {
    let (c1, c2, t1, t2) = (dims.c1, dims.c2, dims.tile_b1(), dims.tile_b2());
    let b2 = dims.b2;
    let n = dims.n();
    let mut m = DenseMatrix::zeros(n, n);
    for l1 in 0..c1 {
        for l2 in 0..t1 {
            for j1 in 0..c2 {
                for j2 in 0..t2 {
                    for k1 in 0..c1 {
                        for k2 in 0..t1 {
                            for i1 in 0..c2 {
                                for i2 in 0..t2 {
                                    let row = (l1 * t1 + l2) * b2 + j1 * t2 + j2;
                                    let col = (k1 * t1 + k2) * b2 + i1 * t2 + i2;
                                    m[(row, col)] = l.at(&[l1, j1, k1, i1, j2, l2, k2])
                                        * r.at(&[l1, j1, k1, i1, k2, j2, i2]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

/// Softmax by direct definition, max-shifted only for range.
pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
