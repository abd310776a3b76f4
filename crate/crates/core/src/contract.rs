//! The fixed contraction patterns used by the alternating solver and by
//! factor application. Index names follow the Monarch convention:
//! `L[j, ℓ, k]` is `b2 × b1 × b1`, `R[k, j, i]` is `b1 × b2 × b2`, and the
//! blocked inputs `Q[ℓ, j, v]`, `K[k, i, v]`, `V[k, i, v]` are `b1 × b2 × d`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContractPattern {
    /// `α_R[k,j,v] = Σ_ℓ L[j,ℓ,k] Q[ℓ,j,v]`
    AlphaR,
    /// `c_R[k,j] = Σ_ℓ L[j,ℓ,k]`
    MassR,
    /// `β_R[k,j,i] = Σ_v α_R[k,j,v] K[k,i,v]`
    BetaR,
    /// `α_L[j,k,v] = Σ_i R[k,j,i] K[k,i,v]`
    AlphaL,
    /// `c_L[j,k] = Σ_i R[k,j,i] log max(R[k,j,i], floor)`
    EntropyL { log_floor: f64 },
    /// `β_L[j,ℓ,k] = Σ_v α_L[j,k,v] Q[ℓ,j,v]`
    BetaL,
    /// `Y[k,j,v] = Σ_i R[k,j,i] V[k,i,v]`
    ValueY,
    /// `O[ℓ,j,v] = Σ_k L[j,ℓ,k] Y[k,j,v]`
    OutputO,
}

pub fn contract(pattern: ContractPattern, operands: &[&Tensor]) -> Result<Tensor> {
    use ContractPattern::*;
    let arity = match pattern {
        MassR | EntropyL { .. } => 1,
        _ => 2,
    };
    if operands.len() != arity {
        return Err(Error::Invalid(format!(
            "{pattern:?} takes {arity} operand(s), got {}",
            operands.len()
        )));
    }
    match pattern {
        AlphaR => alpha_r(operands[0], operands[1]),
        MassR => mass_r(operands[0]),
        BetaR => beta_r(operands[0], operands[1]),
        AlphaL => alpha_l(operands[0], operands[1]),
        EntropyL { log_floor } => entropy_l(operands[0], log_floor),
        BetaL => beta_l(operands[0], operands[1]),
        ValueY => value_y(operands[0], operands[1]),
        OutputO => output_o(operands[0], operands[1]),
    }
}

fn dims3(t: &Tensor, name: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::Shape(format!("{name} must be 3-d, got {s:?}"))),
    }
}

fn expect(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(msg()))
    }
}

fn alpha_r(l: &Tensor, q: &Tensor) -> Result<Tensor> {
    let (b2, b1, b1k) = dims3(l, "L")?;
    let (qb1, qb2, d) = dims3(q, "Q")?;
    expect(b1 == b1k && qb1 == b1 && qb2 == b2, || {
        format!("AlphaR: L {:?} incompatible with Q {:?}", l.shape(), q.shape())
    })?;
    let (ld, qd) = (l.data(), q.data());
    let mut out = Tensor::zeros(&[b1, b2, d]);
    let od = out.data_mut();
    for j in 0..b2 {
        for ell in 0..b1 {
            let qrow = &qd[(ell * b2 + j) * d..(ell * b2 + j + 1) * d];
            let lrow = &ld[(j * b1 + ell) * b1..(j * b1 + ell + 1) * b1];
            for (k, &w) in lrow.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let o = &mut od[(k * b2 + j) * d..(k * b2 + j + 1) * d];
                for (x, &y) in o.iter_mut().zip(qrow) {
                    *x += w * y;
                }
            }
        }
    }
    Ok(out)
}

fn mass_r(l: &Tensor) -> Result<Tensor> {
    let (b2, b1, b1k) = dims3(l, "L")?;
    expect(b1 == b1k, || format!("MassR: L must be b2 x b1 x b1, got {:?}", l.shape()))?;
    let ld = l.data();
    let mut out = Tensor::zeros(&[b1, b2]);
    let od = out.data_mut();
    for j in 0..b2 {
        for ell in 0..b1 {
            for k in 0..b1 {
                od[k * b2 + j] += ld[(j * b1 + ell) * b1 + k];
            }
        }
    }
    Ok(out)
}

fn beta_r(alpha: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (b1, b2, d) = dims3(alpha, "alpha_R")?;
    expect(k.shape() == [b1, b2, d], || {
        format!("BetaR: alpha {:?} incompatible with K {:?}", alpha.shape(), k.shape())
    })?;
    let (ad, kd) = (alpha.data(), k.data());
    let mut out = Tensor::zeros(&[b1, b2, b2]);
    let od = out.data_mut();
    for kk in 0..b1 {
        for j in 0..b2 {
            let a = &ad[(kk * b2 + j) * d..(kk * b2 + j + 1) * d];
            for i in 0..b2 {
                let krow = &kd[(kk * b2 + i) * d..(kk * b2 + i + 1) * d];
                od[(kk * b2 + j) * b2 + i] = a.iter().zip(krow).map(|(x, y)| x * y).sum();
            }
        }
    }
    Ok(out)
}

fn alpha_l(r: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (b1, b2, b2i) = dims3(r, "R")?;
    let (kb1, kb2, d) = dims3(k, "K")?;
    expect(b2 == b2i && kb1 == b1 && kb2 == b2, || {
        format!("AlphaL: R {:?} incompatible with K {:?}", r.shape(), k.shape())
    })?;
    let (rd, kd) = (r.data(), k.data());
    let mut out = Tensor::zeros(&[b2, b1, d]);
    let od = out.data_mut();
    for kk in 0..b1 {
        for j in 0..b2 {
            let o = &mut od[(j * b1 + kk) * d..(j * b1 + kk + 1) * d];
            for i in 0..b2 {
                let w = rd[(kk * b2 + j) * b2 + i];
                if w == 0.0 {
                    continue;
                }
                let krow = &kd[(kk * b2 + i) * d..(kk * b2 + i + 1) * d];
                for (x, &y) in o.iter_mut().zip(krow) {
                    *x += w * y;
                }
            }
        }
    }
    Ok(out)
}

fn entropy_l(r: &Tensor, log_floor: f64) -> Result<Tensor> {
    let (b1, b2, b2i) = dims3(r, "R")?;
    expect(b2 == b2i, || format!("EntropyL: R must be b1 x b2 x b2, got {:?}", r.shape()))?;
    let rd = r.data();
    let mut out = Tensor::zeros(&[b2, b1]);
    let od = out.data_mut();
    for kk in 0..b1 {
        for j in 0..b2 {
            let row = &rd[(kk * b2 + j) * b2..(kk * b2 + j + 1) * b2];
            od[j * b1 + kk] = row.iter().map(|&x| x * x.max(log_floor).ln()).sum();
        }
    }
    Ok(out)
}

fn beta_l(alpha: &Tensor, q: &Tensor) -> Result<Tensor> {
    let (b2, b1, d) = dims3(alpha, "alpha_L")?;
    expect(q.shape() == [b1, b2, d], || {
        format!("BetaL: alpha {:?} incompatible with Q {:?}", alpha.shape(), q.shape())
    })?;
    let (ad, qd) = (alpha.data(), q.data());
    let mut out = Tensor::zeros(&[b2, b1, b1]);
    let od = out.data_mut();
    for j in 0..b2 {
        for ell in 0..b1 {
            let qrow = &qd[(ell * b2 + j) * d..(ell * b2 + j + 1) * d];
            for kk in 0..b1 {
                let a = &ad[(j * b1 + kk) * d..(j * b1 + kk + 1) * d];
                od[(j * b1 + ell) * b1 + kk] = a.iter().zip(qrow).map(|(x, y)| x * y).sum();
            }
        }
    }
    Ok(out)
}

fn value_y(r: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (b1, b2, b2i) = dims3(r, "R")?;
    let (vb1, vb2, d) = dims3(v, "V")?;
    expect(b2 == b2i && vb1 == b1 && vb2 == b2, || {
        format!("ValueY: R {:?} incompatible with V {:?}", r.shape(), v.shape())
    })?;
    let (rd, vd) = (r.data(), v.data());
    let mut out = Tensor::zeros(&[b1, b2, d]);
    let od = out.data_mut();
    for kk in 0..b1 {
        for j in 0..b2 {
            let o = &mut od[(kk * b2 + j) * d..(kk * b2 + j + 1) * d];
            for i in 0..b2 {
                let w = rd[(kk * b2 + j) * b2 + i];
                if w == 0.0 {
                    continue;
                }
                let vrow = &vd[(kk * b2 + i) * d..(kk * b2 + i + 1) * d];
                for (x, &y) in o.iter_mut().zip(vrow) {
                    *x += w * y;
                }
            }
        }
    }
    Ok(out)
}

fn output_o(l: &Tensor, y: &Tensor) -> Result<Tensor> {
    let (b2, b1, b1k) = dims3(l, "L")?;
    let (yb1, yb2, d) = dims3(y, "Y")?;
    expect(b1 == b1k && yb1 == b1 && yb2 == b2, || {
        format!("OutputO: L {:?} incompatible with Y {:?}", l.shape(), y.shape())
    })?;
    let (ld, yd) = (l.data(), y.data());
    let mut out = Tensor::zeros(&[b1, b2, d]);
    let od = out.data_mut();
    for j in 0..b2 {
        for ell in 0..b1 {
            let o = &mut od[(ell * b2 + j) * d..(ell * b2 + j + 1) * d];
            for kk in 0..b1 {
                let w = ld[(j * b1 + ell) * b1 + kk];
                if w == 0.0 {
                    continue;
                }
                let yrow = &yd[(kk * b2 + j) * d..(kk * b2 + j + 1) * d];
                for (x, &z) in o.iter_mut().zip(yrow) {
                    *x += w * z;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use ContractPattern::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn stacked_identity(b1: usize, b2: usize) -> Tensor {
        Tensor::from_fn(&[b2, b1, b1], |i| if i[1] == i[2] { 1.0 } else { 0.0 })
    }

    #[test]
    fn alpha_r_with_identity_l_is_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random(&[3, 4, 2], &mut rng);
        let a = contract(AlphaR, &[&stacked_identity(3, 4), &q]).unwrap();
        assert_eq!(a, q);
        let c = contract(MassR, &[&stacked_identity(3, 4)]).unwrap();
        assert!(c.data().iter().all(|x| *x == 1.0));
    }

    #[test]
    fn value_y_with_one_hot_r_selects_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b1, b2, d) = (2, 3, 4);
        let v = random(&[b1, b2, d], &mut rng);
        // R[k, j, i] = 1 iff i == (j + 1) % b2
        let r = Tensor::from_fn(&[b1, b2, b2], |x| if x[2] == (x[1] + 1) % b2 { 1.0 } else { 0.0 });
        let y = contract(ValueY, &[&r, &v]).unwrap();
        for k in 0..b1 {
            for j in 0..b2 {
                for c in 0..d {
                    assert_eq!(y.at(&[k, j, c]), v.at(&[k, (j + 1) % b2, c]));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_operands() {
        let l = stacked_identity(3, 4);
        assert!(contract(AlphaR, &[&l]).is_err());
        assert!(contract(AlphaR, &[&l, &Tensor::zeros(&[4, 3, 2])]).is_err());
        assert!(contract(MassR, &[&Tensor::zeros(&[2, 3])]).is_err());
    }
}
