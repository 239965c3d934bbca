use super::{identity, Operator, C64};
use crate::{Error, Result};

fn same_dim(a: &Operator, b: &Operator) -> Result<usize> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok(a.nrows())
}

/// Average gate fidelity between two unitaries of dimension `d`:
/// `(|Tr(U†V)|² + d) / (d² + d)`.
pub fn average_gate_fidelity(u: &Operator, v: &Operator) -> Result<f64> {
    let d = same_dim(u, v)? as f64;
    let overlap = (u.adjoint() * v).trace().norm_sqr();
    Ok(((overlap + d) / (d * d + d)).clamp(0.0, 1.0))
}

/// Average fidelity of a possibly non-unitary operator `m` (e.g. the
/// computational-subspace block of a leaky propagator) to the unitary `target`:
/// `(Tr(M M†) + |Tr M|²) / (d(d+1))` with `M = target† m`.
///
/// Reduces to [`average_gate_fidelity`] when `m` is unitary; population that
/// left the subspace lowers `Tr(M M†)` and counts as error.
pub fn subspace_average_fidelity(target: &Operator, m: &Operator) -> Result<f64> {
    let d = same_dim(target, m)? as f64;
    let mm = target.adjoint() * m;
    let norm = (&mm * mm.adjoint()).trace().re;
    let tr = mm.trace().norm_sqr();
    Ok(((norm + tr) / (d * (d + 1.0))).clamp(0.0, 1.0))
}

/// Superoperator of `ρ ↦ U ρ U†` acting on column-stacked `vec(ρ)`.
pub fn unitary_superop(u: &Operator) -> Operator {
    u.map(|z| z.conj()).kronecker(u)
}

/// Average fidelity of a channel given as a superoperator on column-stacked
/// density matrices of dimension `d`, relative to the unitary `target`.
///
/// Uses `F = (Σ_k |Tr(U†K_k)|² + Tr(Σ_k K_k†K_k)) / (d(d+1))`, valid for
/// trace-decreasing maps as well.
pub fn channel_average_fidelity(target: &Operator, superop: &Operator) -> Result<f64> {
    let d = target.nrows();
    if superop.nrows() != d * d || superop.ncols() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: superop.nrows(),
        });
    }
    let su = unitary_superop(target);
    let overlap = (su.adjoint() * superop).trace().re;
    // Σ_i Tr E(|i⟩⟨i|): trace of the image of the identity.
    let id = identity(d);
    let vec_id = nalgebra::DVector::from_iterator(d * d, id.iter().copied());
    let image = superop * &vec_id;
    let trace_out: C64 = (0..d).map(|i| image[i * d + i]).sum();
    let df = d as f64;
    Ok(((overlap + trace_out.re) / (df * (df + 1.0))).clamp(0.0, 1.0))
}
