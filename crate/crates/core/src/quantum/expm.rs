//! Matrix exponential.
//!
//! General matrices use scaling and squaring with a degree-13 Padé
//! approximant (Higham 2005). Hermitian generators of unitary evolution go
//! through the eigen-decomposition instead, which is exactly unitary up to
//! round-off.

use nalgebra::DVector;

use super::{eigh, identity, require_square, Operator, C64};
use crate::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &Operator) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(scale · a)`.
pub fn matrix_exp(a: &Operator, scale: C64) -> Result<Operator> {
    let n = require_square(a)?;
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) || !scale.re.is_finite() {
        return Err(Error::Overflow);
    }
    if n == 0 {
        return Ok(Operator::zeros(0, 0));
    }
    let a = a * scale;
    let norm = one_norm(&a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = &a * C64::new(2f64.powi(-squarings), 0.0);

    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let eye = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let u_outer = &a6 * &u_inner + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &eye * b(1);
    let u = &a * u_outer;
    let v_inner = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = &a6 * v_inner + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &eye * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::Overflow)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(r)
}

/// `exp(−i · h · t)` for Hermitian `h`.
pub fn expm_hermitian(h: &Operator, t: f64) -> Result<Operator> {
    let (values, vectors) = eigh(h)?;
    let n = values.len();
    let phases = DVector::from_iterator(n, values.iter().map(|&e| C64::from_polar(1.0, -e * t)));
    let mut scaled = vectors.clone();
    for j in 0..n {
        let p = phases[j];
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= p);
    }
    Ok(scaled * vectors.adjoint())
}
